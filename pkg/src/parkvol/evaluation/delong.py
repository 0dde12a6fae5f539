"""Paired AUC-difference significance test (DeLong variance estimate)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument
from .metrics import _check_scores_labels, _midranks

_DEGENERATE_VAR = 1e-12


@dataclass
class AucComparison:
    p_value: float
    auc_a: float
    auc_b: float
    z: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "auc_a": self.auc_a,
            "auc_b": self.auc_b,
            "z": self.z,
            "degenerate": self.degenerate,
        }


def _placements(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """DeLong structural components for one score vector.

    Returns (v01 over positives, v10 over negatives, auc)."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    m, n = len(pos), len(neg)
    tz = _midranks(np.concatenate([pos, neg]))
    tx = _midranks(pos)
    ty = _midranks(neg)
    v01 = (tz[:m] - tx) / n
    v10 = 1.0 - (tz[m:] - ty) / m
    auc = float(tz[:m].sum() / (m * n) - (m + 1.0) / (2.0 * n))
    return v01, v10, auc


def compare_auc(scores_a, scores_b, labels) -> AucComparison:
    """Two-sided test of AUC(A) == AUC(B) on the same subjects.

    Degenerate variance (e.g. identical score vectors) reports p = 1.0
    with the degeneracy flag set rather than dividing by zero."""
    scores_a, labels_arr = _check_scores_labels(scores_a, labels)
    scores_b, labels_b = _check_scores_labels(scores_b, labels)
    if not np.array_equal(labels_arr, labels_b):
        raise InvalidArgument("labels must be identical for both score vectors")
    if len(scores_a) != len(scores_b):
        raise InvalidArgument("score vectors must cover the same subjects")

    va01, va10, auc_a = _placements(scores_a, labels_arr)
    vb01, vb10, auc_b = _placements(scores_b, labels_arr)
    m, n = len(va01), len(va10)

    s01 = np.cov(np.stack([va01, vb01]), ddof=1) if m > 1 else np.zeros((2, 2))
    s10 = np.cov(np.stack([va10, vb10]), ddof=1) if n > 1 else np.zeros((2, 2))
    s = s01 / m + s10 / n
    var_diff = float(s[0, 0] + s[1, 1] - 2.0 * s[0, 1])

    if not np.isfinite(var_diff) or var_diff < _DEGENERATE_VAR:
        return AucComparison(1.0, auc_a, auc_b, 0.0, degenerate=True)
    z = (auc_a - auc_b) / math.sqrt(var_diff)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return AucComparison(float(p), auc_a, auc_b, float(z), degenerate=False)
