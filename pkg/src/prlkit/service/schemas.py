"""Request/response models shared by the HTTP service and the CLI client."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CommonOptions(BaseModel):
    """Options every pipeline command understands.

    Explicit fields override values from `config_path`, which overrides
    the package defaults.
    """

    config_path: str | None = None
    seed: int | None = None
    jobs: int | None = Field(default=None, ge=1)


class PrepRequest(CommonOptions):
    qsm_path: str
    flair_mask_path: str
    out_dir: str
    subject_id: str = "subject"
    dilation_mm: float | None = Field(default=None, gt=0)
    connectivity: int | None = None


class PrepResponse(BaseModel):
    out_dir: str
    manifest_path: str
    n_lesions: int
    warnings: list[str]


class DetectRequest(CommonOptions):
    manifest_path: str
    out_dir: str
    tau_p: float | None = Field(default=None, ge=0.0, le=1.0)
    tau_r: float | None = Field(default=None, ge=0.0)
    prob_dir: str | None = None
    write_measures: bool = False


class DetectResponse(BaseModel):
    out_dir: str
    verdicts_path: str
    n_lesions: int
    n_prl: int
    warnings: list[str]


class TuneRequest(CommonOptions):
    manifest_path: str
    out_dir: str
    band: tuple[float, float] | None = None
    n_folds: int | None = Field(default=None, ge=2)


class FoldThresholds(BaseModel):
    fold: int
    tau_p: float
    tau_r: float
    val_sensitivity: float
    val_ppv: float
    fallback: bool


class TuneResponse(BaseModel):
    out_dir: str
    per_fold: list[FoldThresholds]
    pooled_sensitivity: float | None
    pooled_ppv: float | None
    warnings: list[str]


class EvalRequest(CommonOptions):
    verdicts_path: str
    manifest_path: str
    out_dir: str
    pred_rims_dir: str | None = None


class EvalResponse(BaseModel):
    out_dir: str
    counts: dict[str, int]
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    accuracy: float | None
    roc_auc: float | None
    pr_auc: float | None
    kappa: float | None
    dice_mean: float | None
    dice_std: float | None
    warnings: list[str]


class PhantomRequest(CommonOptions):
    out_dir: str
    n_subjects: int | None = Field(default=None, ge=1)
    lesions_per_subject: tuple[int, int] | None = None
    prl_fraction: float | None = Field(default=None, ge=0.0, le=1.0)
    rim_thickness_vox: tuple[int, int] | None = None
    partial_rim_fraction: float | None = Field(default=None, ge=0.0, le=1.0)
    rim_arc_degrees: tuple[float, float] | None = None
    noise_sigma: float | None = Field(default=None, ge=0.0)
    blur_radius_vox: float | None = Field(default=None, ge=0.0)


class PhantomResponse(BaseModel):
    out_dir: str
    manifest_path: str
    n_subjects: int
    n_lesions: int
    n_prl: int


class HealthResponse(BaseModel):
    status: str
    version: str
