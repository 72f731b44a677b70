"""Rim segmentation and per-slice rim-length / lesion-perimeter measurement.

A probability rim map is thresholded into a binary rim mask, each axial
slice of the rim is reduced to a one-pixel-wide skeleton by iterative
two-subiteration thinning, and rim length is the skeleton pixel count.
The FLAIR lesion perimeter is the count of mask pixels with at least one
4-neighbor outside the mask (slice borders count as outside).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .prep import LesionPatch
from .volume import Volume, VolumeKind

# Ring of 8 neighbors in circular order: P2..P9 of the classic
# two-subiteration scheme, as (d_axis0, d_axis1) offsets.
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class RimSegmentation:
    """Binary rim mask produced by thresholding at `tau_p`."""

    mask: Volume
    tau_p: float


@dataclass(frozen=True)
class SliceMeasure:
    slice_index: int
    rim_length: int = 0
    flair_perimeter: int = 0


def threshold_probability(prob: Volume, tau_p: float, within: Volume | None = None) -> RimSegmentation:
    """Binarize a probability map: foreground iff value >= tau_p.

    The comparison is inclusive, so tau_p = 1.0 keeps exactly the voxels
    with probability 1. When `within` is given (the patch's dilated mask),
    the result is intersected with it.
    """
    if prob.kind is not VolumeKind.PROBABILITY:
        raise InputError(f"expected a probability volume, got {prob.kind.value}")
    if not (0.0 <= tau_p <= 1.0):
        raise InputError(f"tau_p must be in [0,1], got {tau_p!r}")
    mask = prob.data >= tau_p
    if within is not None:
        if within.kind is not VolumeKind.BINARY_MASK:
            raise InputError("within must be a binary mask")
        if not within.same_grid(prob):
            raise InputError("within mask disagrees with probability dims/spacing")
        mask &= within.data.astype(bool)
    return RimSegmentation(mask=Volume.binary(mask, prob.spacing), tau_p=float(tau_p))


def _ring_planes(img: np.ndarray) -> list[np.ndarray]:
    """Neighbor planes P2..P9 for a zero-padded uint8 image (core view)."""
    n0, n1 = img.shape[0] - 2, img.shape[1] - 2
    return [img[1 + da : 1 + da + n0, 1 + db : 1 + db + n1] for da, db in _RING]


def _candidates(img: np.ndarray, step: int) -> np.ndarray:
    """Deletion candidates of one subiteration, on the frozen padded image."""
    core = img[1:-1, 1:-1].astype(bool)
    ring = _ring_planes(img)
    b = np.zeros(core.shape, dtype=np.int8)
    for plane in ring:
        b += plane
    a = np.zeros(core.shape, dtype=np.int8)
    for k in range(8):
        a += (ring[k] == 0) & (ring[(k + 1) % 8] == 1)
    p2, p4, p6, p8 = ring[0], ring[2], ring[4], ring[6]
    if step == 0:
        edge = ((p2 & p4 & p6) == 0) & ((p4 & p6 & p8) == 0)
    else:
        edge = ((p2 & p4 & p8) == 0) & ((p2 & p6 & p8) == 0)
    return core & (b >= 2) & (b <= 6) & (a == 1) & edge


def _deletable(img: np.ndarray, r: int, c: int, step: int) -> bool:
    """Re-evaluate the subiteration conditions for one pixel of the live image."""
    ring = [int(img[r + da, c + db]) for da, db in _RING]
    b = sum(ring)
    if not (2 <= b <= 6):
        return False
    a = sum(ring[k] == 0 and ring[(k + 1) % 8] == 1 for k in range(8))
    if a != 1:
        return False
    p2, p4, p6, p8 = ring[0], ring[2], ring[4], ring[6]
    if step == 0:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def thin_slice(slice_mask: np.ndarray) -> np.ndarray:
    """Thin a 2D binary grid to a one-pixel-wide, topology-preserving skeleton.

    Iterates the classic two-subiteration boundary peel until stable.
    Candidates are gathered in parallel per subiteration, then deleted in
    canonical raster order (x fastest) with the conditions re-checked
    against the live image before each deletion. The re-check makes every
    deletion a simple-point removal, so 8-connected components are never
    split, merged, or lost, at the cost of an occasional extra surviving
    pixel relative to a fully parallel peel.
    """
    slice_mask = np.asarray(slice_mask)
    if slice_mask.ndim != 2:
        raise InputError(f"thin_slice expects a 2D grid, got shape {slice_mask.shape}")
    img = np.pad(slice_mask.astype(np.uint8), 1)
    while True:
        removed = 0
        for step in (0, 1):
            cand = _candidates(img, step)
            if not cand.any():
                continue
            flat = np.flatnonzero(cand.ravel(order="F"))
            rows, cols = np.unravel_index(flat, cand.shape, order="F")
            for r, c in zip(rows + 1, cols + 1):
                if _deletable(img, r, c, step):
                    img[r, c] = 0
                    removed += 1
        if removed == 0:
            break
    return img[1:-1, 1:-1].astype(bool)


def perimeter_2d(slice_mask: np.ndarray) -> int:
    """Count mask pixels with at least one 4-neighbor outside the mask.

    Pixels on the grid border count their out-of-bounds side as background.
    """
    m = np.asarray(slice_mask).astype(bool)
    if m.ndim != 2:
        raise InputError(f"perimeter_2d expects a 2D grid, got shape {m.shape}")
    padded = np.pad(m, 1)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return int(np.count_nonzero(m & ~interior))


def rim_length_per_slice(rim: RimSegmentation) -> list[SliceMeasure]:
    """Skeleton pixel count of the rim mask, slice by slice."""
    out = []
    for z in range(rim.mask.n_slices):
        sl = rim.mask.slice2d(z)
        length = int(thin_slice(sl).sum()) if sl.any() else 0
        out.append(SliceMeasure(slice_index=z, rim_length=length))
    return out


def flair_perimeter_per_slice(patch: LesionPatch) -> list[SliceMeasure]:
    """4-connectivity boundary pixel count of the FLAIR lesion, slice by slice."""
    mask = patch.flair_mask
    return [
        SliceMeasure(slice_index=z, flair_perimeter=perimeter_2d(mask.slice2d(z)))
        for z in range(mask.n_slices)
    ]


def slice_measures(rim: RimSegmentation, patch: LesionPatch) -> list[SliceMeasure]:
    """Combined per-slice rim length and FLAIR perimeter for one lesion."""
    if not rim.mask.same_grid(patch.flair_mask):
        raise InputError("rim segmentation disagrees with patch dims/spacing")
    lengths = rim_length_per_slice(rim)
    perims = flair_perimeter_per_slice(patch)
    return [
        SliceMeasure(slice_index=a.slice_index, rim_length=a.rim_length, flair_perimeter=b.flair_perimeter)
        for a, b in zip(lengths, perims)
    ]
