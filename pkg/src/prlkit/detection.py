"""Per-lesion rim-ratio profiles and the consecutive-slice PRL rule.

The rule ("rim ratio above a threshold on at least two consecutive axial
slices") is exposed as a continuous lesion score: the best over adjacent
slice pairs of the pair's smaller ratio. Thresholding that score at tau_r
is exactly the rule, and the score doubles as the ranking statistic for
ROC/PR analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError
from .morphology import SliceMeasure


@dataclass(frozen=True)
class DetectionThresholds:
    """Probability threshold tau_p and rim-ratio threshold tau_r."""

    tau_p: float = 0.5
    tau_r: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.tau_p <= 1.0):
            raise InputError(f"tau_p must be in [0,1], got {self.tau_p!r}")
        if not (math.isfinite(self.tau_r) and self.tau_r >= 0.0):
            raise InputError(f"tau_r must be a non-negative real, got {self.tau_r!r}")


@dataclass(frozen=True)
class RimRatioProfile:
    """Per-slice rim-length / FLAIR-perimeter ratios for one lesion.

    Only slices with nonzero FLAIR perimeter carry a ratio; the others are
    recorded in `excluded_slices` and break slice adjacency.
    """

    lesion_id: int
    tau_p: float
    slice_indices: tuple[int, ...]
    ratios: tuple[float, ...]
    excluded_slices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.slice_indices) != len(self.ratios):
            raise InputError("slice_indices and ratios must align")
        if any(r < 0 for r in self.ratios):
            raise InputError("rim ratios must be non-negative")

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.slice_indices, self.ratios))

    @property
    def has_adjacent_pair(self) -> bool:
        present = set(self.slice_indices)
        return any(z + 1 in present for z in present)


@dataclass(frozen=True)
class LesionVerdict:
    lesion_id: int
    is_prl: bool
    score: float
    thresholds: DetectionThresholds


def rim_ratio_profile(
    measures: Sequence[SliceMeasure],
    lesion_id: int = 0,
    tau_p: float = 0.0,
) -> RimRatioProfile:
    """Ratios rim_length/flair_perimeter over slices with nonzero perimeter."""
    indices = []
    ratios = []
    excluded = []
    for m in measures:
        if m.flair_perimeter > 0:
            indices.append(m.slice_index)
            ratios.append(m.rim_length / m.flair_perimeter)
        else:
            excluded.append(m.slice_index)
    return RimRatioProfile(
        lesion_id=lesion_id,
        tau_p=tau_p,
        slice_indices=tuple(indices),
        ratios=tuple(ratios),
        excluded_slices=tuple(excluded),
    )


def lesion_score(profile: RimRatioProfile) -> float:
    """Best adjacent-pair statistic: max over pairs (z, z+1) of min(ratio_z, ratio_{z+1}).

    Both slices of a pair must carry a ratio; a pair straddling an excluded
    slice does not count as consecutive. No adjacent pair means score 0, so
    single-slice rims can never qualify.
    """
    by_slice = profile.as_dict()
    best = 0.0
    for z, r in by_slice.items():
        nxt = by_slice.get(z + 1)
        if nxt is not None:
            best = max(best, min(r, nxt))
    return best


def classify_lesion(profile: RimRatioProfile, thresholds: DetectionThresholds) -> LesionVerdict:
    """Apply the consecutive-slice rule: PRL iff lesion_score >= tau_r.

    A profile without any adjacent measured pair can never be a PRL, even
    at tau_r = 0: the score alone cannot distinguish "no pair" from "a pair
    with ratio 0", so pair existence is checked explicitly to keep the
    verdict exactly equivalent to the direct rule for every tau_r.
    """
    score = lesion_score(profile)
    return LesionVerdict(
        lesion_id=profile.lesion_id,
        is_prl=profile.has_adjacent_pair and score >= thresholds.tau_r,
        score=score,
        thresholds=thresholds,
    )
