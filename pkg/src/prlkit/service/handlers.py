"""Command handlers: request model in, response model out.

Both the HTTP endpoints and the CLI's local mode dispatch through these,
so a request behaves identically whether it arrives over the wire or from
the command line.
"""

from __future__ import annotations

from ..config import RunConfig, parse_config_file, resolve_config
from ..phantom import PhantomSpec
from ..pipeline import run_detect, run_eval, run_phantom, run_prep, run_tune
from . import schemas


def _resolve(req: schemas.CommonOptions, flag_values: dict) -> RunConfig:
    file_values = parse_config_file(req.config_path) if req.config_path else {}
    flags = {"seed": req.seed, "jobs": req.jobs}
    flags.update(flag_values)
    return resolve_config(file_values, flags)


def handle_prep(req: schemas.PrepRequest) -> schemas.PrepResponse:
    config = _resolve(req, {"dilation_mm": req.dilation_mm, "connectivity": req.connectivity})
    result = run_prep(req.qsm_path, req.flair_mask_path, req.out_dir, config, subject_id=req.subject_id)
    return schemas.PrepResponse(
        out_dir=str(result.out_dir),
        manifest_path=str(result.manifest_path),
        n_lesions=result.n_lesions,
        warnings=result.warnings,
    )


def handle_detect(req: schemas.DetectRequest) -> schemas.DetectResponse:
    config = _resolve(req, {"tau_p": req.tau_p, "tau_r": req.tau_r})
    result = run_detect(
        req.manifest_path,
        req.out_dir,
        config,
        prob_dir=req.prob_dir,
        write_measures=req.write_measures,
    )
    return schemas.DetectResponse(
        out_dir=str(result.out_dir),
        verdicts_path=str(result.verdicts_path),
        n_lesions=result.n_lesions,
        n_prl=result.n_prl,
        warnings=result.warnings,
    )


def handle_tune(req: schemas.TuneRequest) -> schemas.TuneResponse:
    config = _resolve(req, {"band": req.band, "n_folds": req.n_folds})
    result = run_tune(req.manifest_path, req.out_dir, config)
    return schemas.TuneResponse(
        out_dir=str(result.out_dir),
        per_fold=[schemas.FoldThresholds(**fold) for fold in result.per_fold],
        pooled_sensitivity=result.report.sensitivity,
        pooled_ppv=result.report.ppv,
        warnings=result.warnings,
    )


def handle_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    config = _resolve(req, {})
    result = run_eval(
        req.verdicts_path,
        req.manifest_path,
        req.out_dir,
        config,
        pred_rims_dir=req.pred_rims_dir,
    )
    report = result.report
    return schemas.EvalResponse(
        out_dir=str(result.out_dir),
        counts={"tp": report.counts.tp, "fp": report.counts.fp, "tn": report.counts.tn, "fn": report.counts.fn},
        sensitivity=report.sensitivity,
        specificity=report.specificity,
        ppv=report.ppv,
        accuracy=report.accuracy,
        roc_auc=report.roc_auc,
        pr_auc=report.pr_auc,
        kappa=report.kappa,
        dice_mean=report.dice_mean,
        dice_std=report.dice_std,
        warnings=report.warnings,
    )


def handle_phantom(req: schemas.PhantomRequest) -> schemas.PhantomResponse:
    config = _resolve(req, {})
    spec_kwargs = {}
    for name in (
        "n_subjects",
        "lesions_per_subject",
        "prl_fraction",
        "rim_thickness_vox",
        "partial_rim_fraction",
        "rim_arc_degrees",
        "noise_sigma",
        "blur_radius_vox",
    ):
        value = getattr(req, name)
        if value is not None:
            spec_kwargs[name] = value
    spec = PhantomSpec(seed=config.seed, patch_shape=config.patch_shape, dilation_mm=config.dilation_mm, **spec_kwargs)
    result = run_phantom(spec, req.out_dir, config)
    return schemas.PhantomResponse(
        out_dir=str(result.out_dir),
        manifest_path=str(result.manifest_path),
        n_subjects=result.n_subjects,
        n_lesions=result.n_lesions,
        n_prl=result.n_prl,
    )
