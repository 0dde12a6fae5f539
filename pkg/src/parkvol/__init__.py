"""Deep-brain structure volumetry for Parkinsonian-syndrome workups:
phantom cohorts, two segmentation backbones, Dice/AUC evaluation."""

from . import errors, evaluation, io, models, phantom, training
from .io import STRUCTURES, StructureMask, Volume3D, load_nifti, resize_volume, save_nifti
from .models import build_unetr, build_vnet, segment_structure
from .phantom import AtrophyProfile, Condition, Subject, generate_cohort, generate_subject
from .training import FoldAssignment, TrainSpec, dice_loss, make_folds, train

__version__ = "0.1.0"

__all__ = [
    "AtrophyProfile",
    "Condition",
    "FoldAssignment",
    "STRUCTURES",
    "StructureMask",
    "Subject",
    "TrainSpec",
    "Volume3D",
    "build_unetr",
    "build_vnet",
    "dice_loss",
    "errors",
    "evaluation",
    "generate_cohort",
    "generate_subject",
    "io",
    "load_nifti",
    "make_folds",
    "models",
    "phantom",
    "resize_volume",
    "save_nifti",
    "segment_structure",
    "train",
    "training",
]
