"""Deterministic synthetic lesion cohorts with construction-guaranteed labels.

Each lesion is an ellipsoidal FLAIR blob inside a standard patch. PRL
lesions carry a shell rim hugging the lesion boundary on at least two
consecutive slices; non-PRLs carry no rim, a single-slice ring, or a short
arc kept below the decision threshold. Every lesion is replayed through
the production thresholding/thinning/perimeter path before it is
accepted, so labels agree with this package's own measurement conventions
exactly (zero label noise on uncorrupted probability maps).

All randomness flows through numpy's PCG64 via SeedSequence spawn keys
derived from (seed, subject, lesion), so cohorts are reproducible and
independent of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from scipy import ndimage

from .detection import DetectionThresholds, lesion_score, rim_ratio_profile
from .errors import InputError, InvariantError
from .morphology import slice_measures, threshold_probability
from .prep import LesionPatch, apply_dilated_mask, attach_probability, dilate_mask_mm
from .volume import Spacing, Volume

# Labels are certified against the pipeline's default operating point.
CHECK_THRESHOLDS = DetectionThresholds(tau_p=0.5, tau_r=0.1)

_MAX_GEOMETRY_ATTEMPTS = 8


@dataclass(frozen=True)
class PhantomSpec:
    n_subjects: int = 50
    lesions_per_subject: tuple[int, int] = (4, 12)
    prl_fraction: float = 0.033
    rim_thickness_vox: tuple[int, int] = (1, 3)
    partial_rim_fraction: float = 0.3
    rim_arc_degrees: tuple[float, float] = (12.0, 30.0)
    noise_sigma: float = 0.0
    blur_radius_vox: float = 0.0
    seed: int = 0
    spacing: Spacing = Spacing(0.4, 0.4, 1.0)
    patch_shape: tuple[int, int, int] = (64, 64, 24)
    dilation_mm: float = 3.0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise InputError("n_subjects must be positive")
        lo, hi = self.lesions_per_subject
        if not (1 <= lo <= hi):
            raise InputError(f"bad lesions_per_subject range {self.lesions_per_subject}")
        for name in ("prl_fraction", "partial_rim_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InputError(f"{name} must be in [0,1], got {v!r}")
        t_lo, t_hi = self.rim_thickness_vox
        if not (1 <= t_lo <= t_hi):
            raise InputError(f"bad rim_thickness_vox range {self.rim_thickness_vox}")
        if self.noise_sigma < 0 or self.blur_radius_vox < 0:
            raise InputError("noise_sigma and blur_radius_vox must be non-negative")


@dataclass(frozen=True)
class PhantomLesion:
    subject_id: str
    lesion_id: int
    patch: LesionPatch
    truth_rim: Volume
    is_prl: bool
    geometry: dict
    noise_seed: int


@dataclass
class PhantomCohort:
    spec: PhantomSpec
    lesions: list[PhantomLesion] = field(default_factory=list)

    @property
    def n_prl(self) -> int:
        return sum(l.is_prl for l in self.lesions)

    def subject_positive_counts(self) -> list[tuple[str, int]]:
        counts: dict[str, int] = {}
        for lesion in self.lesions:
            counts[lesion.subject_id] = counts.get(lesion.subject_id, 0) + int(lesion.is_prl)
        return sorted(counts.items())


def corrupt_probability(truth: Volume, sigma: float, blur: float, seed: int) -> Volume:
    """Degrade a binary truth rim into a noisy probability map.

    The truth is smoothed with a separable Gaussian of radius `blur`
    (in voxels), seeded Gaussian noise of scale `sigma` is added, and the
    result is clamped to [0,1]. sigma = blur = 0 returns the truth exactly.
    """
    if sigma < 0 or blur < 0:
        raise InputError("sigma and blur must be non-negative")
    data = truth.data.astype(np.float64)
    if blur > 0:
        data = ndimage.gaussian_filter(data, sigma=blur)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, sigma, size=data.shape)
    if sigma > 0 or blur > 0:
        data = np.clip(data, 0.0, 1.0)
    return Volume.probability(data, truth.spacing)


def _ellipsoid_mask(shape, spacing: Spacing, center, radii_mm) -> np.ndarray:
    sx, sy, sz = spacing.as_tuple()
    ix = (np.arange(shape[0])[:, None, None] - center[0]) * sx / radii_mm[0]
    iy = (np.arange(shape[1])[None, :, None] - center[1]) * sy / radii_mm[1]
    iz = (np.arange(shape[2])[None, None, :] - center[2]) * sz / radii_mm[2]
    return (ix**2 + iy**2 + iz**2) <= 1.0


def _shell_slice(blob_slice: np.ndarray, thickness: int) -> np.ndarray | None:
    """Ring of `thickness` pixels just inside the blob boundary, or None."""
    t = thickness
    while t >= 1:
        eroded = ndimage.binary_erosion(blob_slice, iterations=t)
        if eroded.sum() >= 4:
            return blob_slice & ~eroded
        t -= 1
    return None


def _arc_filter(shape, center, phi0_deg: float, arc_deg: float, spacing: Spacing) -> np.ndarray:
    """Angular sector [phi0, phi0+arc) around the lesion center, in mm coords."""
    sx, sy, _ = spacing.as_tuple()
    dx = (np.arange(shape[0])[:, None] - center[0]) * sx
    dy = (np.arange(shape[1])[None, :] - center[1]) * sy
    ang = np.degrees(np.arctan2(dy, dx)) % 360.0
    rel = (ang - phi0_deg) % 360.0
    return rel < arc_deg


def measure_score(patch: LesionPatch) -> float:
    """Replay the production detection path on the patch's probability map."""
    seg = threshold_probability(patch.prob, CHECK_THRESHOLDS.tau_p, within=patch.dilated_mask)
    profile = rim_ratio_profile(slice_measures(seg, patch), lesion_id=patch.lesion_id)
    return lesion_score(profile)


def _with_rim(base: LesionPatch, rim: np.ndarray, rng) -> LesionPatch:
    """Attach synthetic QSM content and the rim-as-probability to a base patch."""
    blob = base.flair_mask.data.astype(bool)
    qsm = -0.03 * blob + 0.12 * rim + rng.normal(0.0, 0.005, size=blob.shape)
    patch = replace(base, qsm=Volume.intensity(qsm, base.spacing))
    truth = Volume.probability(rim.astype(np.float64), base.spacing)
    return apply_dilated_mask(attach_probability(patch, truth))


def _build_lesion(spec: PhantomSpec, subject_idx: int, lesion_idx: int, lesion_id: int) -> PhantomLesion:
    shape = spec.patch_shape
    kind_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(subject_idx, lesion_idx, 0)))
    is_prl = kind_rng.random() < spec.prl_fraction
    wants_confuser = (not is_prl) and kind_rng.random() < spec.partial_rim_fraction
    confuser_single_slice = kind_rng.random() < 0.5

    noise_seed = int(np.random.SeedSequence(spec.seed, spawn_key=(subject_idx, lesion_idx, 1)).generate_state(1)[0])

    for attempt in range(_MAX_GEOMETRY_ATTEMPTS):
        rng = np.random.default_rng(
            np.random.SeedSequence(spec.seed, spawn_key=(subject_idx, lesion_idx, 10 + attempt))
        )
        radii = (rng.uniform(1.8, 4.5), rng.uniform(1.8, 4.5), rng.uniform(2.0, 4.5))
        center = (
            shape[0] / 2.0 + rng.uniform(-4.0, 4.0),
            shape[1] / 2.0 + rng.uniform(-4.0, 4.0),
            shape[2] / 2.0 + rng.uniform(-1.5, 1.5),
        )
        thickness = int(rng.integers(spec.rim_thickness_vox[0], spec.rim_thickness_vox[1] + 1))
        arc_deg = float(rng.uniform(*spec.rim_arc_degrees))
        phi0 = float(rng.uniform(0.0, 360.0))

        blob = _ellipsoid_mask(shape, spec.spacing, center, radii)
        if blob.sum() < 30:
            continue
        flair = Volume.binary(blob, spec.spacing)
        base = LesionPatch(
            lesion_id=lesion_id,
            offset=(0, 0, 0),
            qsm=Volume.intensity(np.zeros(shape), spec.spacing),
            flair_mask=flair,
            dilated_mask=dilate_mask_mm(flair, spec.dilation_mm),
        )

        shells: dict[int, np.ndarray] = {}
        for z in range(shape[2]):
            sl = blob[:, :, z]
            if sl.sum() < 20:
                continue
            shell = _shell_slice(sl, thickness)
            if shell is not None:
                shells[z] = shell
        usable = sorted(shells)
        runs = _consecutive_runs(usable)
        longest = max(runs, key=len) if runs else []

        rim = np.zeros(shape, dtype=bool)
        geometry = {
            "radii_mm": [round(r, 4) for r in radii],
            "center_vox": [round(c, 4) for c in center],
            "rim_thickness_vox": thickness,
            "rim_kind": "none",
            "rim_slices": [],
        }

        if is_prl:
            if len(longest) < 2:
                continue
            k = min(len(longest), int(rng.integers(2, 5)))
            start = (len(longest) - k) // 2
            rim_slices = longest[start : start + k]
            for z in rim_slices:
                rim[:, :, z] = shells[z]
            geometry.update(rim_kind="full_ring", rim_slices=rim_slices)
            patch = _with_rim(base, rim, rng)
            if measure_score(patch) > CHECK_THRESHOLDS.tau_r:
                return _finish_lesion(spec, subject_idx, lesion_id, patch, rim, True, geometry, noise_seed)
            continue  # shell degenerated under thinning; try new geometry

        if wants_confuser and usable:
            if confuser_single_slice or len(longest) < 2:
                z = usable[len(usable) // 2]
                rim[:, :, z] = shells[z]
                geometry.update(rim_kind="single_slice_ring", rim_slices=[z])
            else:
                rim_slices = longest[:2]
                sector = _arc_filter(shape[:2], center[:2], phi0, arc_deg, spec.spacing)
                for z in rim_slices:
                    rim[:, :, z] = shells[z] & sector
                geometry.update(rim_kind="sub_threshold_arc", rim_slices=rim_slices, arc_degrees=round(arc_deg, 2))

        patch = _with_rim(base, rim, rng)
        score = measure_score(patch)
        shrink = 0
        while score >= CHECK_THRESHOLDS.tau_r and geometry["rim_kind"] == "sub_threshold_arc" and shrink < 2:
            shrink += 1
            arc_deg /= 2.0
            sector = _arc_filter(shape[:2], center[:2], phi0, arc_deg, spec.spacing)
            rim[:, :, :] = False
            for z in geometry["rim_slices"]:
                rim[:, :, z] = shells[z] & sector
            geometry["arc_degrees"] = round(arc_deg, 2)
            patch = _with_rim(base, rim, rng)
            score = measure_score(patch)
        if score >= CHECK_THRESHOLDS.tau_r and geometry["rim_slices"]:
            # arc refuses to go quiet; demote to a single-slice ring
            z = geometry["rim_slices"][0]
            rim[:, :, :] = False
            rim[:, :, z] = shells[z]
            geometry.update(rim_kind="single_slice_ring", rim_slices=[z], arc_degrees=None)
            patch = _with_rim(base, rim, rng)
            score = measure_score(patch)
        if score < CHECK_THRESHOLDS.tau_r:
            return _finish_lesion(spec, subject_idx, lesion_id, patch, rim, False, geometry, noise_seed)

    raise InputError(
        f"infeasible phantom geometry for subject {subject_idx}, lesion {lesion_idx} "
        f"(is_prl={is_prl}, spec seed {spec.seed})"
    )


def _consecutive_runs(sorted_indices: list[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for z in sorted_indices:
        if runs and z == runs[-1][-1] + 1:
            runs[-1].append(z)
        else:
            runs.append([z])
    return runs


def _finish_lesion(spec, subject_idx, lesion_id, patch, rim, is_prl, geometry, noise_seed) -> PhantomLesion:
    truth_rim = Volume.binary(rim, spec.spacing)
    if spec.noise_sigma > 0 or spec.blur_radius_vox > 0:
        corrupted = corrupt_probability(truth_rim, spec.noise_sigma, spec.blur_radius_vox, noise_seed)
        patch = attach_probability(patch, corrupted)
    return PhantomLesion(
        subject_id=f"subj-{subject_idx:03d}",
        lesion_id=lesion_id,
        patch=patch,
        truth_rim=truth_rim,
        is_prl=is_prl,
        geometry=geometry,
        noise_seed=noise_seed,
    )


def _lesion_layout(spec: PhantomSpec) -> Iterator[tuple[int, int, int]]:
    """(subject_idx, lesion_idx, lesion_id) triples in deterministic order."""
    lesion_id = 0
    lo, hi = spec.lesions_per_subject
    for si in range(spec.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(si,)))
        n_lesions = int(rng.integers(lo, hi + 1))
        for li in range(n_lesions):
            lesion_id += 1
            yield si, li, lesion_id


def generate_phantom_cohort(spec: PhantomSpec) -> PhantomCohort:
    """Generate the full cohort; bit-identical output for a given spec."""
    cohort = PhantomCohort(spec=spec)
    for si, li, lesion_id in _lesion_layout(spec):
        cohort.lesions.append(_build_lesion(spec, si, li, lesion_id))
    return cohort


def verify_cohort(cohort: PhantomCohort) -> None:
    """Re-check that labels match the pipeline's rule on uncorrupted maps."""
    for lesion in cohort.lesions:
        patch = lesion.patch
        truth = Volume.probability(lesion.truth_rim.data.astype(np.float64), patch.spacing)
        patch = attach_probability(patch, truth)
        score = measure_score(patch)
        if (score >= CHECK_THRESHOLDS.tau_r) != lesion.is_prl:
            raise InvariantError(
                f"phantom self-check failed for lesion {lesion.lesion_id}: "
                f"label {lesion.is_prl}, measured score {score:.4f}"
            )
