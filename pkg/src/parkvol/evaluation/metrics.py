"""Overlap, volumetry and ROC-AUC metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument, UndefinedRatio
from ..io import STRUCTURES, StructureMask

FEATURE_NAMES = (
    "midbrain",
    "pons",
    "midbrain_pons_ratio",
    "third_ventricle",
    "caudate",
    "putamen",
    "pallidum",
)


def _mask_array(m) -> np.ndarray:
    data = m.data if isinstance(m, StructureMask) else np.asarray(m)
    if ((data != 0) & (data != 1)).any():
        raise InvalidArgument("mask is not binary")
    return data.astype(np.float64)


def dice_score(pred, ref) -> float:
    """2*|overlap| / (|pred| + |ref|); two empty masks agree perfectly (1.0)."""
    p = _mask_array(pred)
    r = _mask_array(ref)
    if p.shape != r.shape:
        raise InvalidArgument(f"shape mismatch: {p.shape} vs {r.shape}")
    denom = p.sum() + r.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (p * r).sum() / denom)


def structure_volume(mask: StructureMask) -> float:
    """Voxel count times physical voxel volume, in mm^3."""
    data = _mask_array(mask)
    return float(data.sum()) * mask.voxel_volume_mm3()


@dataclass
class VolumeFeatures:
    """Per-subject structure volumes (mm^3) plus the derived ratio."""

    subject_id: str
    condition: str
    volumes: dict[str, float]

    def __post_init__(self):
        missing = [s for s in STRUCTURES if s not in self.volumes]
        if missing:
            raise InvalidArgument(f"features for {self.subject_id} missing volumes: {missing}")
        if any(v < 0 for v in self.volumes.values()):
            raise InvalidArgument("volumes must be >= 0")

    @property
    def ratio(self) -> float | None:
        """Midbrain/pons volume ratio; None when the pons volume is zero."""
        if self.volumes["pons"] <= 0:
            return None
        return self.volumes["midbrain"] / self.volumes["pons"]

    def value(self, feature: str) -> float | None:
        if feature == "midbrain_pons_ratio":
            return self.ratio
        return self.volumes[feature]

    def vector(self) -> np.ndarray:
        """Six structure volumes in the canonical order."""
        return np.array([self.volumes[s] for s in STRUCTURES], dtype=np.float64)


def midbrain_pons_ratio(features: VolumeFeatures) -> float:
    if features.volumes["pons"] <= 0:
        raise UndefinedRatio(f"subject {features.subject_id} has zero pons volume")
    return features.volumes["midbrain"] / features.volumes["pons"]


@dataclass(frozen=True)
class BinaryTask:
    """A pairwise diagnosis problem: positive conditions vs negative ones."""

    name: str
    positive: frozenset
    negative: frozenset

    def __post_init__(self):
        pos = frozenset(self.positive)
        neg = frozenset(self.negative)
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)
        if pos & neg:
            raise InvalidArgument(f"task {self.name}: positive/negative sets overlap")
        if not pos or not neg:
            raise InvalidArgument(f"task {self.name}: both sets must be non-empty")

    def label(self, condition: str) -> int | None:
        if condition in self.positive:
            return 1
        if condition in self.negative:
            return 0
        return None


# The seven pairwise problems reported by the pipeline. "Normal"/"PD" act
# as the negative class in their comparisons against disease conditions.
DEFAULT_TASKS = (
    BinaryTask("Normal vs. PSP", frozenset({"PSP"}), frozenset({"Normal"})),
    BinaryTask("Normal vs. MSA-P", frozenset({"MSA-P"}), frozenset({"Normal"})),
    BinaryTask("Normal vs. MSA-C", frozenset({"MSA-C"}), frozenset({"Normal"})),
    BinaryTask("Normal vs. PD", frozenset({"PD"}), frozenset({"Normal"})),
    BinaryTask("PD vs. PSP", frozenset({"PSP"}), frozenset({"PD"})),
    BinaryTask("PD vs. MSA-P", frozenset({"MSA-P"}), frozenset({"PD"})),
    BinaryTask("PD vs. MSA-C", frozenset({"MSA-C"}), frozenset({"PD"})),
)


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise InvalidArgument("scores and labels must be 1D and the same length")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise InvalidArgument(f"labels must be 0/1, got {sorted(uniq)}")
    if uniq != {0, 1}:
        raise InvalidArgument("both classes must be present")
    return scores, labels.astype(np.int64)


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group average."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties.

    This is the raw, unoriented value: the probability that a random
    positive outscores a random negative. Single-feature reporting flips
    direction separately (see oriented_auc)."""
    scores, labels = _check_scores_labels(scores, labels)
    ranks = _midranks(scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def oriented_auc(scores, labels) -> tuple[float, str]:
    """max(auc, 1-auc) plus which direction signals the positive class.

    Atrophy makes *smaller* volume the disease signal for most tasks, so
    the feature direction is not fixed a priori."""
    raw = roc_auc(scores, labels)
    if raw >= 0.5:
        return raw, "larger"
    return 1.0 - raw, "smaller"


@dataclass
class AucResult:
    """Fold-wise AUC summary for one (task, method, feature/classifier) cell."""

    auc: float  # pooled out-of-fold AUC
    fold_values: list[float]
    mean: float
    std: float
    direction: str = "larger"
    p_value: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        if self.fold_values:
            lo, hi = min(self.fold_values), max(self.fold_values)
            if not (lo - 1e-12 <= self.mean <= hi + 1e-12):
                raise InvalidArgument("mean must lie within the fold value range")

    @classmethod
    def from_folds(cls, pooled: float, fold_values, direction: str = "larger") -> "AucResult":
        vals = [float(v) for v in fold_values]
        return cls(
            auc=float(pooled),
            fold_values=vals,
            mean=float(np.mean(vals)) if vals else float(pooled),
            std=float(np.std(vals)) if vals else 0.0,
            direction=direction,
        )

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "fold_values": self.fold_values,
            "mean": self.mean,
            "std": self.std,
            "direction": self.direction,
        }


def features_from_masks(subject_id: str, condition: str, masks: dict[str, StructureMask]) -> VolumeFeatures:
    vols = {name: structure_volume(masks[name]) for name in STRUCTURES}
    return VolumeFeatures(subject_id, condition, vols)
