"""Voxel-grid data model, NIfTI I/O, and 3D connected-component labeling.

Volumes are immutable after construction (the backing array is marked
read-only) and always hold the grid in canonical x-fastest order: axis 0
is x, axis 1 is y, axis 2 is z. All per-slice operations in this package
treat z (axis 2) as the axial slice direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import nifti
from .errors import InputError

PROBABILITY_TOL = 1e-6

_STRUCTURE_RANK = {6: 1, 18: 2, 26: 3}


class VolumeKind(str, Enum):
    INTENSITY = "intensity"
    PROBABILITY = "probability"
    BINARY_MASK = "binary_mask"
    LABEL_MAP = "label_map"


@dataclass(frozen=True)
class Spacing:
    """Voxel edge lengths in millimeters."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for name, v in (("dx", self.dx), ("dy", self.dy), ("dz", self.dz)):
            if not (math.isfinite(v) and v > 0):
                raise InputError(f"spacing {name} must be a positive finite length, got {v!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    def isclose(self, other: "Spacing", tol: float = 1e-6) -> bool:
        return all(abs(a - b) <= tol for a, b in zip(self.as_tuple(), other.as_tuple()))


def _normalize_data(data: np.ndarray, kind: VolumeKind) -> np.ndarray:
    if data.ndim != 3:
        raise InputError(f"volume data must be 3D, got shape {data.shape}")
    original = data
    if kind is VolumeKind.BINARY_MASK:
        values = np.unique(data)
        if not np.isin(values, (0, 1)).all():
            raise InputError(f"binary mask contains values other than 0/1: {values[:8]}")
        if data.dtype != np.uint8:
            data = data.astype(np.uint8)
    elif kind is VolumeKind.LABEL_MAP:
        if not np.issubdtype(data.dtype, np.integer):
            rounded = np.rint(data)
            if not np.array_equal(rounded, data):
                raise InputError("label map contains non-integer values")
            data = rounded
        if data.size and data.min() < 0:
            raise InputError("label map contains negative labels")
        if data.dtype != np.int32:
            data = data.astype(np.int32)
    else:
        if data.dtype != np.float64:
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise InputError("volume contains non-finite voxels")
        if kind is VolumeKind.PROBABILITY and data.size:
            lo, hi = float(data.min()), float(data.max())
            if lo < -PROBABILITY_TOL or hi > 1.0 + PROBABILITY_TOL:
                raise InputError(f"probability values outside [0,1]: range [{lo}, {hi}]")
            if lo < 0.0 or hi > 1.0:
                data = np.clip(data, 0.0, 1.0)
    out = np.asfortranarray(data)
    if out is original:  # never freeze memory the caller still owns
        out = out.copy(order="F")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with physical voxel spacing.

    `data` is (nx, ny, nz), read-only. Probability volumes are validated to
    [0,1] (values within 1e-6 outside are clamped at construction), binary
    masks to {0,1}, label maps to non-negative integers.
    """

    data: np.ndarray
    spacing: Spacing
    kind: VolumeKind

    def __post_init__(self):
        object.__setattr__(self, "data", _normalize_data(np.asarray(self.data), self.kind))

    # -- constructors ------------------------------------------------------

    @classmethod
    def intensity(cls, data, spacing: Spacing) -> "Volume":
        return cls(data, spacing, VolumeKind.INTENSITY)

    @classmethod
    def probability(cls, data, spacing: Spacing) -> "Volume":
        return cls(data, spacing, VolumeKind.PROBABILITY)

    @classmethod
    def binary(cls, data, spacing: Spacing) -> "Volume":
        data = np.asarray(data)
        if data.dtype == bool:
            data = data.astype(np.uint8)
        return cls(data, spacing, VolumeKind.BINARY_MASK)

    @classmethod
    def labels(cls, data, spacing: Spacing) -> "Volume":
        return cls(data, spacing, VolumeKind.LABEL_MAP)

    # -- views -------------------------------------------------------------

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def n_slices(self) -> int:
        return self.data.shape[2]

    def slice2d(self, z: int) -> np.ndarray:
        """The (nx, ny) grid of axial slice z."""
        return self.data[:, :, z]

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def same_grid(self, other: "Volume", tol: float = 1e-6) -> bool:
        return self.dims == other.dims and self.spacing.isclose(other.spacing, tol)


@dataclass(frozen=True)
class LesionLabelMap:
    """Connected-component labeling of a lesion mask.

    Labels run 1..K in order of first-encountered voxel under the canonical
    x-fastest scan; 0 is background.
    """

    volume: Volume
    lesion_ids: tuple[int, ...]
    connectivity: int

    def __post_init__(self):
        if self.volume.kind is not VolumeKind.LABEL_MAP:
            raise InputError("LesionLabelMap requires a label_map volume")

    def lesion_mask(self, lesion_id: int) -> Volume:
        if lesion_id not in self.lesion_ids:
            raise InputError(f"unknown lesion id {lesion_id}")
        return Volume.binary(self.volume.data == lesion_id, self.volume.spacing)

    def lesion_size(self, lesion_id: int) -> int:
        if lesion_id not in self.lesion_ids:
            raise InputError(f"unknown lesion id {lesion_id}")
        return int(np.count_nonzero(self.volume.data == lesion_id))


def label_components(mask: Volume, connectivity: int = 26) -> LesionLabelMap:
    """Label maximal connected components of a binary mask.

    Component ids are assigned 1..K by the order in which each component is
    first met scanning x fastest, then y, then z, so the labeling is
    deterministic and translation renumbers nothing but ids.
    """
    if mask.kind is not VolumeKind.BINARY_MASK:
        raise InputError(f"label_components expects a binary mask, got {mask.kind.value}")
    rank = _STRUCTURE_RANK.get(connectivity)
    if rank is None:
        raise InputError(f"connectivity must be one of 6/18/26, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, rank)
    labeled, count = ndimage.label(mask.data, structure=structure)
    if count:
        flat = labeled.ravel(order="F")
        ids, first = np.unique(flat, return_index=True)
        order = ids[np.argsort(first)]
        lut = np.zeros(count + 1, dtype=np.int32)
        next_id = 1
        for old in order:
            if old != 0:
                lut[old] = next_id
                next_id += 1
        labeled = lut[labeled]
    return LesionLabelMap(
        volume=Volume.labels(labeled, mask.spacing),
        lesion_ids=tuple(range(1, count + 1)),
        connectivity=connectivity,
    )


def load_volume(path: str | Path, kind: VolumeKind | str) -> Volume:
    """Load a 3D NIfTI-1 file as the expected kind of volume.

    The expectation is validated: binary masks must contain only 0/1,
    label maps non-negative integers, probabilities values in [0,1] (with
    clamping of violations within 1e-6).
    """
    kind = VolumeKind(kind)
    data, spacing = nifti.read(path)
    if not np.isfinite(np.asarray(data, dtype=np.float64)).all():
        raise InputError(f"{path}: contains non-finite voxels")
    try:
        return Volume(data, Spacing(*spacing), kind)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def save_volume(volume: Volume, path: str | Path) -> None:
    """Write a volume as single-file NIfTI-1 (.nii or .nii.gz).

    Masks go out as uint8, label maps as int16, real-valued volumes as
    float32, so a load/save round trip is bit-exact for masks and within
    1e-6 for reals of modest magnitude.
    """
    if volume.kind is VolumeKind.BINARY_MASK:
        data = volume.data.astype(np.uint8)
    elif volume.kind is VolumeKind.LABEL_MAP:
        if volume.data.max(initial=0) > np.iinfo(np.int16).max:
            raise InputError("label map exceeds int16 range supported by the file format")
        data = volume.data.astype(np.int16)
    else:
        data = volume.data.astype(np.float32)
    nifti.write(path, data, volume.spacing.as_tuple())
