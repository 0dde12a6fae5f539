"""Binary classifiers over structure-volume features: regularized logistic
regression (Newton iterations) and gradient-boosted trees with
second-order leaf weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, InvalidArgument


def _check_xy(features, labels) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise InvalidArgument("features and labels disagree on sample count")
    if not np.isfinite(x).all():
        raise InvalidArgument("features must be finite")
    uniq = set(np.unique(y).tolist())
    if uniq != {0.0, 1.0}:
        raise InvalidArgument("labels must contain both classes, coded 0/1")
    if min((y == 0).sum(), (y == 1).sum()) < 2:
        raise InvalidArgument("need at least 2 subjects per class")
    return x, y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticClassifier:
    weights: np.ndarray  # in standardized feature space
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    converged: bool = True

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def predict_score(self, features) -> np.ndarray:
        """Decision score (log-odds); monotone in the class-1 probability."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        return self._standardize(x) @ self.weights + self.intercept

    def predict_proba(self, features) -> np.ndarray:
        return _sigmoid(self.predict_score(features))


def fit_logistic(
    features,
    labels,
    l2: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> LogisticClassifier:
    """L2-regularized binomial logistic regression by Newton's method.

    Features are standardized with train-set mean/std. Optimization stops
    when the gradient norm drops to ``tol``; exceeding ``max_iter`` raises
    ConvergenceError carrying the last iterate."""
    x, y = _check_xy(features, labels)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    n, d = xs.shape

    beta = np.zeros(d + 1)  # weights then intercept (intercept unpenalized)
    xa = np.hstack([xs, np.ones((n, 1))])
    reg = np.zeros(d + 1)
    reg[:d] = l2
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        p = _sigmoid(xa @ beta)
        grad = xa.T @ (p - y) + reg * beta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return LogisticClassifier(beta[:d].copy(), float(beta[d]), mean, scale, n_iter, True)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        hess = xa.T @ (w[:, None] * xa) + np.diag(reg)
        beta = beta - np.linalg.solve(hess, grad)
    clf = LogisticClassifier(beta[:d].copy(), float(beta[d]), mean, scale, n_iter, False)
    raise ConvergenceError(
        f"Newton iterations did not reach gradient norm {tol} in {max_iter} steps",
        classifier=clf,
    )


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return -g_sum / (h_sum + reg_lambda)


def _build_tree(x, g, h, depth, max_depth, reg_lambda) -> _TreeNode:
    node = _TreeNode(value=_leaf_weight(g.sum(), h.sum(), reg_lambda))
    if depth >= max_depth or len(g) < 2:
        return node

    g_tot, h_tot = g.sum(), h.sum()
    parent_score = g_tot**2 / (h_tot + reg_lambda)
    best_gain = 0.0
    best = None
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs, gs, hs = x[order, j], g[order], h[order]
        g_left = np.cumsum(gs)[:-1]
        h_left = np.cumsum(hs)[:-1]
        valid = xs[:-1] != xs[1:]  # can only split between distinct values
        if not valid.any():
            continue
        gain = 0.5 * (
            g_left**2 / (h_left + reg_lambda)
            + (g_tot - g_left) ** 2 / (h_tot - h_left + reg_lambda)
            - parent_score
        )
        gain[~valid] = -np.inf
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best = (j, (xs[i] + xs[i + 1]) / 2.0)
    if best is None:
        return node

    j, thr = best
    mask = x[:, j] <= thr
    node.feature = j
    node.threshold = thr
    node.left = _build_tree(x[mask], g[mask], h[mask], depth + 1, max_depth, reg_lambda)
    node.right = _build_tree(x[~mask], g[~mask], h[~mask], depth + 1, max_depth, reg_lambda)
    return node


def _predict_tree(node: _TreeNode, x: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(x.shape[0], node.value)
    mask = x[:, node.feature] <= node.threshold
    out = np.empty(x.shape[0])
    out[mask] = _predict_tree(node.left, x[mask])
    out[~mask] = _predict_tree(node.right, x[~mask])
    return out


def _logloss(y: np.ndarray, logits: np.ndarray) -> float:
    p = np.clip(_sigmoid(logits), 1e-12, 1.0 - 1e-12)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


@dataclass
class BoostedTreesClassifier:
    trees: list[_TreeNode] = field(default_factory=list)
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    train_loss_history: list[float] = field(default_factory=list)

    def predict_score(self, features) -> np.ndarray:
        """Accumulated logit over all boosting rounds."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        out = np.zeros(x.shape[0])
        for tree in self.trees:
            out += self.learning_rate * _predict_tree(tree, x)
        return out

    def predict_proba(self, features) -> np.ndarray:
        return _sigmoid(self.predict_score(features))


def fit_gbt(
    features,
    labels,
    n_trees: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    reg_lambda: float = 1.0,
) -> BoostedTreesClassifier:
    """Gradient-boosted regression trees on the logistic loss.

    Each round fits a depth-limited tree to the current negative gradients
    with second-order leaf weights (-G/(H+lambda)) and shrinkage. Exact
    greedy splits over sorted feature values make the fit deterministic
    given parameters and data order."""
    x, y = _check_xy(features, labels)
    if n_trees < 1:
        raise InvalidArgument("n_trees must be >= 1")
    clf = BoostedTreesClassifier(learning_rate=learning_rate, reg_lambda=reg_lambda)
    logits = np.zeros(x.shape[0])
    for _ in range(n_trees):
        p = _sigmoid(logits)
        g = p - y
        h = p * (1.0 - p)
        tree = _build_tree(x, g, h, 0, max_depth, reg_lambda)
        clf.trees.append(tree)
        logits += learning_rate * _predict_tree(tree, x)
        clf.train_loss_history.append(_logloss(y, logits))
    return clf
