from .classifiers import (
    BoostedTreesClassifier,
    LogisticClassifier,
    fit_gbt,
    fit_logistic,
)
from .delong import AucComparison, compare_auc
from .metrics import (
    DEFAULT_TASKS,
    FEATURE_NAMES,
    AucResult,
    BinaryTask,
    VolumeFeatures,
    dice_score,
    features_from_masks,
    midbrain_pons_ratio,
    oriented_auc,
    roc_auc,
    structure_volume,
)
from .report import CLASSIFIER_NAMES, EvaluationReport, run_task_matrix, write_task_svg
from .timing import TimingReport, measure_segmentation_time

__all__ = [
    "AucComparison",
    "AucResult",
    "BinaryTask",
    "BoostedTreesClassifier",
    "CLASSIFIER_NAMES",
    "DEFAULT_TASKS",
    "EvaluationReport",
    "FEATURE_NAMES",
    "LogisticClassifier",
    "TimingReport",
    "VolumeFeatures",
    "compare_auc",
    "dice_score",
    "features_from_masks",
    "fit_gbt",
    "fit_logistic",
    "measure_segmentation_time",
    "midbrain_pons_ratio",
    "oriented_auc",
    "roc_auc",
    "run_task_matrix",
    "structure_volume",
    "write_task_svg",
]
