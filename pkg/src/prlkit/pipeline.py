"""File-based pipeline runners behind the service endpoints and the CLI.

Each runner consumes NIfTI volumes plus a JSON patch manifest and writes
its results (JSON, JSONL, CSV, NIfTI) into an output directory together
with a resolved-config snapshot. Per-lesion work is distributed over a
bounded thread pool; results are keyed and sorted before writing, so
output bytes are identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig, write_snapshot
from .detection import DetectionThresholds, classify_lesion, lesion_score, rim_ratio_profile
from .errors import InputError
from .metrics import CurvePoint, MetricsReport, detection_report, dice_score
from .morphology import slice_measures, threshold_probability
from .phantom import PhantomCohort, PhantomSpec, generate_phantom_cohort
from .prep import LesionPatch, apply_dilated_mask, attach_probability, crop_patch, with_dilated_mask
from .tuning import ScoredLesion, cross_validate, make_folds
from .volume import Volume, VolumeKind, label_components, load_volume, save_volume

MANIFEST_FORMAT = "prl-patch-manifest-v1"
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# small shared helpers


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_curve_csv(path: Path, points: Sequence[CurvePoint]) -> None:
    lines = ["threshold,x,y"]
    lines += [f"{p.threshold},{p.x},{p.y}" for p in points]
    path.write_text("\n".join(lines) + "\n")


def _lesion_file_stem(lesion_id: int) -> str:
    return f"les-{lesion_id:04d}"


# ---------------------------------------------------------------------------
# patch manifests


@dataclass
class ManifestEntry:
    lesion_id: int
    subject_id: str
    offset: tuple[int, int, int]
    files: dict[str, str]
    truncated: bool = False
    is_prl: bool | None = None
    geometry: dict | None = None
    noise_seed: int | None = None

    def to_dict(self) -> dict:
        out = {
            "lesion_id": self.lesion_id,
            "subject_id": self.subject_id,
            "offset": list(self.offset),
            "truncated": self.truncated,
            "files": dict(sorted(self.files.items())),
        }
        if self.is_prl is not None:
            out["is_prl"] = self.is_prl
        if self.geometry is not None:
            out["geometry"] = self.geometry
        if self.noise_seed is not None:
            out["noise_seed"] = self.noise_seed
        return out


@dataclass
class Manifest:
    patch_shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    dilation_mm: float
    masked: bool
    lesions: list[ManifestEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "patch_shape": list(self.patch_shape),
            "spacing": list(self.spacing),
            "dilation_mm": self.dilation_mm,
            "masked": self.masked,
            "warnings": list(self.warnings),
            **self.extra,
            "lesions": [entry.to_dict() for entry in sorted(self.lesions, key=lambda e: e.lesion_id)],
        }

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST_NAME
        _write_json(path, self.to_dict())
        return path


def read_manifest(path: str | Path) -> tuple[Manifest, Path]:
    """Load a manifest; returns it plus the directory file paths are relative to."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise InputError(f"no such manifest: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if raw.get("format") != MANIFEST_FORMAT:
        raise InputError(f"{path}: unknown manifest format {raw.get('format')!r}")
    manifest = Manifest(
        patch_shape=tuple(raw["patch_shape"]),
        spacing=tuple(raw["spacing"]),
        dilation_mm=float(raw["dilation_mm"]),
        masked=bool(raw["masked"]),
        warnings=list(raw.get("warnings", [])),
        extra={k: raw[k] for k in raw if k not in {
            "format", "patch_shape", "spacing", "dilation_mm", "masked", "warnings", "lesions"}},
    )
    for entry in raw["lesions"]:
        manifest.lesions.append(
            ManifestEntry(
                lesion_id=int(entry["lesion_id"]),
                subject_id=str(entry["subject_id"]),
                offset=tuple(entry["offset"]),
                files=dict(entry["files"]),
                truncated=bool(entry.get("truncated", False)),
                is_prl=entry.get("is_prl"),
                geometry=entry.get("geometry"),
                noise_seed=entry.get("noise_seed"),
            )
        )
    return manifest, path.parent


def _save_patch_files(patch: LesionPatch, root: Path, subject_id: str, truth_rim: Volume | None = None) -> dict[str, str]:
    sub = root / "patches" / subject_id
    sub.mkdir(parents=True, exist_ok=True)
    stem = _lesion_file_stem(patch.lesion_id)
    files: dict[str, str] = {}

    def put(name: str, vol: Volume) -> None:
        rel = f"patches/{subject_id}/{stem}_{name}.nii.gz"
        save_volume(vol, root / rel)
        files[name] = rel

    put("qsm", patch.qsm)
    put("flair_mask", patch.flair_mask)
    if patch.dilated_mask is not None:
        put("dilated_mask", patch.dilated_mask)
    if patch.prob is not None:
        put("prob", patch.prob)
    if truth_rim is not None:
        put("truth_rim", truth_rim)
    return files


def load_patch(entry: ManifestEntry, root: Path, prob_dir: Path | None = None, need_prob: bool = True) -> LesionPatch:
    """Materialize a LesionPatch from manifest files.

    When `prob_dir` is given it overrides the manifest's probability map;
    the expected file there is <prob_dir>/les-XXXX_prob.nii.gz.
    """
    def vol(name: str, kind: VolumeKind) -> Volume:
        rel = entry.files.get(name)
        if rel is None:
            raise InputError(f"lesion {entry.lesion_id}: manifest lists no {name} file")
        return load_volume(root / rel, kind)

    patch = LesionPatch(
        lesion_id=entry.lesion_id,
        offset=entry.offset,
        qsm=vol("qsm", VolumeKind.INTENSITY),
        flair_mask=vol("flair_mask", VolumeKind.BINARY_MASK),
        dilated_mask=vol("dilated_mask", VolumeKind.BINARY_MASK),
        truncated=entry.truncated,
    )
    if not need_prob:
        return patch
    if prob_dir is not None:
        prob_path = prob_dir / f"{_lesion_file_stem(entry.lesion_id)}_prob.nii.gz"
        if not prob_path.is_file():
            prob_path = prob_dir / f"{_lesion_file_stem(entry.lesion_id)}_prob.nii"
        if not prob_path.is_file():
            raise InputError(f"lesion {entry.lesion_id}: no probability map under {prob_dir}")
        return attach_probability(patch, load_volume(prob_path, VolumeKind.PROBABILITY))
    if "prob" not in entry.files:
        raise InputError(f"lesion {entry.lesion_id}: manifest lists no probability map")
    return attach_probability(patch, vol("prob", VolumeKind.PROBABILITY))


# ---------------------------------------------------------------------------
# prep


@dataclass
class PrepResult:
    out_dir: Path
    manifest_path: Path
    n_lesions: int
    warnings: list[str]


def run_prep(
    qsm_path: str | Path,
    flair_mask_path: str | Path,
    out_dir: str | Path,
    config: RunConfig,
    subject_id: str = "subject",
) -> PrepResult:
    """Split a co-registered QSM / FLAIR-mask pair into per-lesion patches."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    qsm = load_volume(qsm_path, VolumeKind.INTENSITY)
    flair = load_volume(flair_mask_path, VolumeKind.BINARY_MASK)
    if not qsm.same_grid(flair):
        raise InputError(
            f"QSM grid {qsm.dims}@{qsm.spacing.as_tuple()} does not match "
            f"FLAIR mask {flair.dims}@{flair.spacing.as_tuple()}"
        )
    labels = label_components(flair, config.connectivity)
    warnings: list[str] = []
    if not labels.lesion_ids:
        warnings.append("FLAIR mask is empty: no lesions to prepare")

    def build(lesion_id: int) -> ManifestEntry:
        patch = crop_patch(qsm, labels, lesion_id, patch_shape=config.patch_shape)
        patch = apply_dilated_mask(with_dilated_mask(patch, config.dilation_mm))
        files = _save_patch_files(patch, out_dir, subject_id)
        return ManifestEntry(
            lesion_id=lesion_id,
            subject_id=subject_id,
            offset=patch.offset,
            files=files,
            truncated=patch.truncated,
        )

    entries = _parallel_map(build, list(labels.lesion_ids), config.jobs)
    for entry in entries:
        if entry.truncated:
            warnings.append(f"lesion {entry.lesion_id}: larger than the patch window, truncated")
    manifest = Manifest(
        patch_shape=config.patch_shape,
        spacing=qsm.spacing.as_tuple(),
        dilation_mm=config.dilation_mm,
        masked=True,
        lesions=entries,
        warnings=warnings,
        extra={
            "subject_id": subject_id,
            "connectivity": config.connectivity,
            "sources": {"qsm": str(qsm_path), "flair_mask": str(flair_mask_path)},
        },
    )
    manifest_path = manifest.write(out_dir)
    write_snapshot(out_dir, "prep", config, {"qsm": qsm_path, "flair_mask": flair_mask_path})
    return PrepResult(out_dir=out_dir, manifest_path=manifest_path, n_lesions=len(entries), warnings=warnings)


# ---------------------------------------------------------------------------
# detect


@dataclass
class DetectResult:
    out_dir: Path
    verdicts_path: Path
    n_lesions: int
    n_prl: int
    warnings: list[str]


def _detect_one(entry: ManifestEntry, root: Path, prob_dir: Path | None, thresholds: DetectionThresholds, out_dir: Path):
    patch = load_patch(entry, root, prob_dir=prob_dir)
    seg = threshold_probability(patch.prob, thresholds.tau_p, within=patch.dilated_mask)
    measures = slice_measures(seg, patch)
    profile = rim_ratio_profile(measures, lesion_id=entry.lesion_id, tau_p=thresholds.tau_p)
    verdict = classify_lesion(profile, thresholds)
    rim_rel = f"rims/{_lesion_file_stem(entry.lesion_id)}_rim.nii.gz"
    save_volume(seg.mask, out_dir / rim_rel)
    return entry, verdict, profile, measures, rim_rel


def run_detect(
    manifest_path: str | Path,
    out_dir: str | Path,
    config: RunConfig,
    prob_dir: str | Path | None = None,
    write_measures: bool = False,
) -> DetectResult:
    """Segment rims and classify every manifest lesion at (tau_p, tau_r)."""
    out_dir = Path(out_dir)
    (out_dir / "rims").mkdir(parents=True, exist_ok=True)
    manifest, root = read_manifest(manifest_path)
    thresholds = DetectionThresholds(tau_p=config.tau_p, tau_r=config.tau_r)
    prob_root = Path(prob_dir) if prob_dir is not None else None

    results = _parallel_map(
        lambda entry: _detect_one(entry, root, prob_root, thresholds, out_dir),
        sorted(manifest.lesions, key=lambda e: (e.subject_id, e.lesion_id)),
        config.jobs,
    )
    rows = []
    measure_rows = []
    n_prl = 0
    for entry, verdict, profile, measures, rim_rel in results:
        n_prl += int(verdict.is_prl)
        rows.append(
            {
                "lesion_id": entry.lesion_id,
                "subject_id": entry.subject_id,
                "score": verdict.score,
                "is_prl": verdict.is_prl,
                "tau_p": thresholds.tau_p,
                "tau_r": thresholds.tau_r,
                "ratios": list(profile.ratios),
                "slices": list(profile.slice_indices),
                "rim_mask": rim_rel,
            }
        )
        for m in measures:
            measure_rows.append((entry.lesion_id, m.slice_index, m.rim_length, m.flair_perimeter))
    verdicts_path = out_dir / "verdicts.jsonl"
    _write_jsonl(verdicts_path, rows)
    if write_measures:
        lines = ["lesion_id,slice_index,rim_length,flair_perimeter"]
        lines += [f"{a},{b},{c},{d}" for a, b, c, d in measure_rows]
        (out_dir / "measures.csv").write_text("\n".join(lines) + "\n")
    _write_json(
        out_dir / "summary.json",
        {
            "n_lesions": len(rows),
            "n_prl": n_prl,
            "tau_p": thresholds.tau_p,
            "tau_r": thresholds.tau_r,
            "conventions": {
                "rim_length": "2d_skeleton_pixel_count",
                "flair_perimeter": "4_neighbor_boundary_pixel_count",
            },
            "warnings": list(manifest.warnings),
        },
    )
    write_snapshot(out_dir, "detect", config, {"manifest": Path(root) / MANIFEST_NAME})
    return DetectResult(
        out_dir=out_dir,
        verdicts_path=verdicts_path,
        n_lesions=len(rows),
        n_prl=n_prl,
        warnings=list(manifest.warnings),
    )


# ---------------------------------------------------------------------------
# tune


@dataclass
class TuneResult:
    out_dir: Path
    per_fold: list[dict]
    report: MetricsReport
    warnings: list[str]


_ATTAINED_CAP = 500


def _collect_attained(entry: ManifestEntry, root: Path):
    patch = load_patch(entry, root)
    values = patch.prob.data[patch.dilated_mask.data.astype(bool)]
    distinct = np.unique(values[values > 0.0])
    if distinct.size > _ATTAINED_CAP:
        return None
    return distinct


def _score_lesion(entry: ManifestEntry, root: Path, grid: Sequence[float]) -> ScoredLesion:
    patch = load_patch(entry, root)
    scores: dict[float, float] = {}
    has_pair = True
    for tau_p in grid:
        seg = threshold_probability(patch.prob, tau_p, within=patch.dilated_mask)
        profile = rim_ratio_profile(slice_measures(seg, patch), lesion_id=entry.lesion_id, tau_p=tau_p)
        scores[tau_p] = lesion_score(profile)
        has_pair = profile.has_adjacent_pair  # perimeter-only, same at every tau_p
    return ScoredLesion(
        subject_id=entry.subject_id,
        lesion_id=entry.lesion_id,
        is_prl=bool(entry.is_prl),
        scores=scores,
        has_adjacent_pair=has_pair,
    )


def run_tune(manifest_path: str | Path, out_dir: str | Path, config: RunConfig) -> TuneResult:
    """Five-fold cross-validated grid search over (tau_p, tau_r)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, root = read_manifest(manifest_path)
    if not manifest.lesions:
        raise InputError("manifest lists no lesions")
    if any(entry.is_prl is None for entry in manifest.lesions):
        raise InputError("tuning requires ground-truth labels (is_prl) for every lesion")
    if not any(entry.is_prl for entry in manifest.lesions):
        raise InputError("cohort has no positive lesions; nothing to tune against")

    entries = sorted(manifest.lesions, key=lambda e: (e.subject_id, e.lesion_id))
    grid = list(config.effective_tau_p_grid())
    attained = _parallel_map(lambda e: _collect_attained(e, root), entries, config.jobs)
    if all(a is not None for a in attained):
        union = np.unique(np.concatenate([a for a in attained if a is not None] + [np.array([])]))
        if union.size <= _ATTAINED_CAP:
            grid = sorted(set(grid) | {float(v) for v in union if 0.0 <= v <= 1.0})

    scored = _parallel_map(lambda e: _score_lesion(e, root, grid), entries, config.jobs)

    subject_positives: dict[str, int] = {}
    for entry in entries:
        subject_positives[entry.subject_id] = subject_positives.get(entry.subject_id, 0) + int(bool(entry.is_prl))
    folds = make_folds(sorted(subject_positives.items()), n_folds=config.n_folds, seed=config.seed)

    outcome = cross_validate(scored, folds, band=config.band, tau_p_grid=grid)

    _write_json(out_dir / "tuning.json", outcome.tuning.to_dict())
    _write_json(out_dir / "report.json", outcome.report.to_dict())
    _write_curve_csv(out_dir / "roc.csv", outcome.roc_points)
    _write_curve_csv(out_dir / "pr.csv", outcome.pr_points)
    for fold, (roc_pts, pr_pts) in sorted(outcome.fold_curves.items()):
        _write_curve_csv(out_dir / f"roc_fold{fold}.csv", roc_pts)
        _write_curve_csv(out_dir / f"pr_fold{fold}.csv", pr_pts)
    _write_jsonl(
        out_dir / "heldout.jsonl",
        [
            {
                "fold": v.fold,
                "subject_id": v.subject_id,
                "lesion_id": v.lesion_id,
                "score": v.score,
                "predicted": v.predicted,
                "label": v.label,
            }
            for v in outcome.heldout
        ],
    )
    _write_json(
        out_dir / "folds.json",
        {"n_folds": folds.n_folds, "subject_to_fold": dict(sorted(folds.subject_to_fold.items()))},
    )
    write_snapshot(out_dir, "tune", config, {"manifest": Path(root) / MANIFEST_NAME})
    return TuneResult(
        out_dir=out_dir,
        per_fold=outcome.tuning.to_dict()["per_fold"],
        report=outcome.report,
        warnings=outcome.tuning.warnings,
    )


# ---------------------------------------------------------------------------
# eval


@dataclass
class EvalResult:
    out_dir: Path
    report: MetricsReport


def run_eval(
    verdicts_path: str | Path,
    manifest_path: str | Path,
    out_dir: str | Path,
    config: RunConfig,
    pred_rims_dir: str | Path | None = None,
) -> EvalResult:
    """Score detection verdicts (and optionally rim masks) against ground truth."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    verdicts_path = Path(verdicts_path)
    if not verdicts_path.is_file():
        raise InputError(f"no such verdicts file: {verdicts_path}")
    manifest, root = read_manifest(manifest_path)
    labels: dict[tuple[str, int], ManifestEntry] = {}
    for entry in manifest.lesions:
        if entry.is_prl is None:
            raise InputError(f"lesion {entry.lesion_id}: manifest has no ground-truth label")
        labels[(entry.subject_id, entry.lesion_id)] = entry

    records = []
    seen = set()
    with open(verdicts_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            key = (row["subject_id"], int(row["lesion_id"]))
            if key not in labels:
                raise InputError(f"verdict for unknown lesion {key}")
            seen.add(key)
            records.append((key, float(row["score"]), bool(row["is_prl"])))
    missing = set(labels) - seen
    if missing:
        raise InputError(f"{len(missing)} labeled lesions have no verdict (e.g. {sorted(missing)[:3]})")
    records.sort(key=lambda r: r[0])

    triples = [(score, pred, bool(labels[key].is_prl)) for key, score, pred in records]
    dice_rows: list[tuple[int, float]] = []
    if pred_rims_dir is not None:
        pred_rims_dir = Path(pred_rims_dir)
        for key, _, _ in records:
            entry = labels[key]
            if not entry.is_prl or "truth_rim" not in entry.files:
                continue
            truth = load_volume(root / entry.files["truth_rim"], VolumeKind.BINARY_MASK)
            rim_path = pred_rims_dir / f"{_lesion_file_stem(entry.lesion_id)}_rim.nii.gz"
            if not rim_path.is_file():
                raise InputError(f"lesion {entry.lesion_id}: no predicted rim mask under {pred_rims_dir}")
            pred_rim = load_volume(rim_path, VolumeKind.BINARY_MASK)
            dice_rows.append((entry.lesion_id, dice_score(pred_rim, truth)))

    report, roc_points, pr_points = detection_report(
        triples, dice_values=[d for _, d in dice_rows] if dice_rows else None
    )
    _write_json(out_dir / "report.json", report.to_dict())
    _write_curve_csv(out_dir / "roc.csv", roc_points)
    _write_curve_csv(out_dir / "pr.csv", pr_points)
    if dice_rows:
        lines = ["lesion_id,dice"]
        lines += [f"{lesion_id},{value}" for lesion_id, value in dice_rows]
        (out_dir / "dice.csv").write_text("\n".join(lines) + "\n")
    write_snapshot(out_dir, "eval", config, {"verdicts": verdicts_path, "manifest": Path(root) / MANIFEST_NAME})
    return EvalResult(out_dir=out_dir, report=report)


# ---------------------------------------------------------------------------
# phantom


@dataclass
class PhantomResult:
    out_dir: Path
    manifest_path: Path
    n_subjects: int
    n_lesions: int
    n_prl: int


def save_cohort(cohort: PhantomCohort, out_dir: str | Path) -> Path:
    """Persist a phantom cohort as NIfTI patches plus a labeled manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cohort.spec
    entries = []
    for lesion in cohort.lesions:
        files = _save_patch_files(lesion.patch, out_dir, lesion.subject_id, truth_rim=lesion.truth_rim)
        entries.append(
            ManifestEntry(
                lesion_id=lesion.lesion_id,
                subject_id=lesion.subject_id,
                offset=lesion.patch.offset,
                files=files,
                is_prl=lesion.is_prl,
                geometry=lesion.geometry,
                noise_seed=lesion.noise_seed,
            )
        )
    manifest = Manifest(
        patch_shape=spec.patch_shape,
        spacing=spec.spacing.as_tuple(),
        dilation_mm=spec.dilation_mm,
        masked=True,
        lesions=entries,
        extra={
            "phantom_spec": {
                "n_subjects": spec.n_subjects,
                "lesions_per_subject": list(spec.lesions_per_subject),
                "prl_fraction": spec.prl_fraction,
                "rim_thickness_vox": list(spec.rim_thickness_vox),
                "partial_rim_fraction": spec.partial_rim_fraction,
                "rim_arc_degrees": list(spec.rim_arc_degrees),
                "noise_sigma": spec.noise_sigma,
                "blur_radius_vox": spec.blur_radius_vox,
                "seed": spec.seed,
            }
        },
    )
    return manifest.write(out_dir)


def run_phantom(spec: PhantomSpec, out_dir: str | Path, config: RunConfig) -> PhantomResult:
    out_dir = Path(out_dir)
    cohort = generate_phantom_cohort(spec)
    manifest_path = save_cohort(cohort, out_dir)
    write_snapshot(out_dir, "phantom", config, {})
    return PhantomResult(
        out_dir=out_dir,
        manifest_path=manifest_path,
        n_subjects=spec.n_subjects,
        n_lesions=len(cohort.lesions),
        n_prl=cohort.n_prl,
    )
