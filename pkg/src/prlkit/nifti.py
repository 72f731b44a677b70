"""Minimal NIfTI-1 codec for 3D scalar volumes.

Reads and writes single-file NIfTI-1 (.nii, .nii.gz). Only the header
fields this pipeline relies on are interpreted: dimensions, voxel spacing,
datatype, intensity scaling, and orientation (sform, then qform, then
pixdim fallback). On read the voxel grid is reoriented to a canonical
RAS-like axis order so that axis 0 is x (fastest on disk), axis 1 is y,
and axis 2 is z, the axial slice direction. Gzip output is written with a
fixed mtime so identical volumes produce identical bytes.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

HEADER_SIZE = 348
VOX_OFFSET = 352
GZIP_LEVEL = 6

_DTYPE_BY_CODE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_CODE_BY_DTYPE = {dt: code for code, dt in _DTYPE_BY_CODE.items()}


def _open_bytes(path: Path) -> bytes:
    if path.name.endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _quaternion_to_rotation(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _axis_assignment(direction: np.ndarray) -> list[tuple[int, int]] | None:
    """Greedily pair each world axis with its dominant voxel axis.

    Returns [(world_axis, voxel_axis), ...] or None when the direction
    matrix is degenerate (a zero column cannot be assigned).
    """
    strengths = []
    for i in range(3):
        for j in range(3):
            strengths.append((abs(direction[i, j]), i, j))
    strengths.sort(reverse=True)
    used_world: set[int] = set()
    used_voxel: set[int] = set()
    pairs = []
    for mag, i, j in strengths:
        if i in used_world or j in used_voxel:
            continue
        if mag == 0.0:
            return None
        pairs.append((i, j))
        used_world.add(i)
        used_voxel.add(j)
    return pairs if len(pairs) == 3 else None


def _canonicalize(data: np.ndarray, spacing: tuple[float, ...], affine: np.ndarray):
    """Permute/flip voxel axes so the grid is in RAS-like order."""
    pairs = _axis_assignment(affine[:3, :3])
    if pairs is None:
        return data, spacing
    perm = [0, 0, 0]
    flip = [False, False, False]
    for world_axis, voxel_axis in pairs:
        perm[world_axis] = voxel_axis
        flip[world_axis] = affine[world_axis, voxel_axis] < 0
    if perm != [0, 1, 2] or any(flip):
        data = np.transpose(data, axes=perm)
        for axis, f in enumerate(flip):
            if f:
                data = np.flip(data, axis=axis)
        spacing = tuple(spacing[perm[i]] for i in range(3))
    return data, spacing


def read(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a 3D NIfTI-1 file.

    Returns (data, spacing) with data shaped (nx, ny, nz) in canonical
    axis order and spacing in millimeters. Raises InputError on anything
    that is not a single-file 3D scalar NIfTI-1 image.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        raw = _open_bytes(path)
    except (OSError, gzip.BadGzipFile) as exc:
        raise InputError(f"unreadable file {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise InputError(f"{path}: too short to hold a NIfTI-1 header")

    for endian in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(endian + "i", raw, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise InputError(f"{path}: not a NIfTI-1 file (bad header size)")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise InputError(f"{path}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise InputError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    if dim[0] != 3:
        raise InputError(f"{path}: expected a 3D image, header says {dim[0]}D")
    nx, ny, nz = (int(d) for d in dim[1:4])
    if min(nx, ny, nz) < 1:
        raise InputError(f"{path}: non-positive dimensions {(nx, ny, nz)}")

    (datatype, bitpix) = struct.unpack_from(endian + "2h", raw, 70)
    dtype = _DTYPE_BY_CODE.get(datatype)
    if dtype is None:
        raise InputError(f"{path}: unsupported NIfTI datatype code {datatype}")

    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    (vox_offset_f,) = struct.unpack_from(endian + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(endian + "2h", raw, 252)

    vox_offset = int(round(vox_offset_f)) if vox_offset_f else VOX_OFFSET
    count = nx * ny * nz
    end = vox_offset + count * dtype.itemsize
    if end > len(raw):
        raise InputError(f"{path}: truncated voxel data")
    data = np.frombuffer(raw, dtype=dtype.newbyteorder(endian), count=count, offset=vox_offset)
    data = data.reshape((nx, ny, nz), order="F")

    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data.astype(np.float64) * slope + scl_inter

    if sform_code > 0:
        affine = np.eye(4)
        affine[0, :] = struct.unpack_from(endian + "4f", raw, 280)
        affine[1, :] = struct.unpack_from(endian + "4f", raw, 296)
        affine[2, :] = struct.unpack_from(endian + "4f", raw, 312)
    elif qform_code > 0:
        b, c, d = struct.unpack_from(endian + "3f", raw, 256)
        ox, oy, oz = struct.unpack_from(endian + "3f", raw, 268)
        rot = _quaternion_to_rotation(b, c, d)
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        affine = np.eye(4)
        affine[:3, 0] = rot[:, 0] * pixdim[1]
        affine[:3, 1] = rot[:, 1] * pixdim[2]
        affine[:3, 2] = rot[:, 2] * pixdim[3] * qfac
        affine[:3, 3] = (ox, oy, oz)
    else:
        affine = np.diag([pixdim[1], pixdim[2], pixdim[3], 1.0])

    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if min(spacing) <= 0.0:
        raise InputError(f"{path}: non-positive voxel spacing {spacing}")
    data, spacing = _canonicalize(data, spacing, affine)
    return np.asfortranarray(data), spacing


def write(
    path: str | Path,
    data: np.ndarray,
    spacing: tuple[float, float, float],
    affine: np.ndarray | None = None,
) -> None:
    """Write a 3D array as single-file NIfTI-1.

    The array must be shaped (nx, ny, nz) in canonical axis order and have
    one of the supported dtypes (uint8, int16, int32, float32, float64).
    Data is stored little-endian, x-fastest; spacing goes into pixdim and
    an identity-direction sform unless an explicit affine is given.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise InputError(f"expected a 3D array, got shape {data.shape}")
    dtype = np.dtype(data.dtype)
    code = _CODE_BY_DTYPE.get(dtype)
    if code is None:
        raise InputError(f"unsupported dtype for NIfTI output: {dtype}")
    if affine is None:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, data.shape[0], data.shape[1], data.shape[2], 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[123] = 2  # xyzt_units: millimeters
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform on
    struct.pack_into("<4f", hdr, 280, *affine[0, :])
    struct.pack_into("<4f", hdr, 296, *affine[1, :])
    struct.pack_into("<4f", hdr, 312, *affine[2, :])
    hdr[344:348] = b"n+1\x00"

    payload = bytes(hdr) + b"\x00\x00\x00\x00" + data.astype(dtype.newbyteorder("<")).tobytes(order="F")
    try:
        if path.name.endswith(".gz"):
            with open(path, "wb") as fh:
                with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0, compresslevel=GZIP_LEVEL) as gz:
                    gz.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
