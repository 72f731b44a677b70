"""prlkit: paramagnetic rim lesion detection downstream of a rim-probability network.

The pipeline turns per-lesion QSM patches and rim probability maps into
rim segmentations, per-slice rim-ratio profiles, PRL verdicts under the
consecutive-slice rule, cross-validated threshold choices, and evaluation
reports, all verifiable end to end against a synthetic phantom cohort.
"""

__version__ = "0.1.0"

from .detection import DetectionThresholds, LesionVerdict, RimRatioProfile, classify_lesion, lesion_score, rim_ratio_profile
from .errors import InputError, InvariantError, PrlkitError
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    cohens_kappa,
    confusion_metrics,
    dice_bce_loss,
    dice_score,
    pr_curve_auc,
    roc_curve_auc,
)
from .morphology import RimSegmentation, SliceMeasure, thin_slice, threshold_probability
from .phantom import PhantomCohort, PhantomSpec, corrupt_probability, generate_phantom_cohort
from .prep import LesionPatch, apply_dilated_mask, crop_patch, dilate_mask_mm
from .tuning import FoldAssignment, ScoredLesion, cross_validate, grid_search_thresholds, make_folds
from .volume import LesionLabelMap, Spacing, Volume, VolumeKind, label_components, load_volume, save_volume

__all__ = [
    "__version__",
    "ConfusionCounts",
    "DetectionThresholds",
    "FoldAssignment",
    "InputError",
    "InvariantError",
    "LesionLabelMap",
    "LesionPatch",
    "LesionVerdict",
    "MetricsReport",
    "PhantomCohort",
    "PhantomSpec",
    "PrlkitError",
    "RimRatioProfile",
    "RimSegmentation",
    "ScoredLesion",
    "SliceMeasure",
    "Spacing",
    "Volume",
    "VolumeKind",
    "apply_dilated_mask",
    "classify_lesion",
    "cohens_kappa",
    "confusion_metrics",
    "corrupt_probability",
    "crop_patch",
    "cross_validate",
    "dice_bce_loss",
    "dice_score",
    "dilate_mask_mm",
    "generate_phantom_cohort",
    "grid_search_thresholds",
    "label_components",
    "lesion_score",
    "load_volume",
    "make_folds",
    "pr_curve_auc",
    "rim_ratio_profile",
    "roc_curve_auc",
    "save_volume",
    "thin_slice",
    "threshold_probability",
]
