"""Minimal NIfTI-1 I/O and grid resizing.

Supported subset: single-file NIfTI-1 (".nii" / ".nii.gz", magic "n+1"),
little-endian, 3D, datatypes 2 (uint8), 4 (int16) and 16 (float32).
Masks are written as uint8 with the structure name in ``intent_name``;
volumes are written as float32. Orientation headers (qform/sform) are
carried through a load/save round trip untouched but never interpreted:
all geometry in this package comes from ``pixdim`` spacing.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFile,
    InvalidArgument,
    UnsupportedDatatype,
    UnsupportedFormat,
    WriteError,
)

# Deep-brain structures segmented by the pipeline.
STRUCTURES = (
    "pallidum",
    "putamen",
    "caudate",
    "third_ventricle",
    "midbrain",
    "pons",
)

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"
_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_BITPIX = {2: 8, 4: 16, 16: 32}


def _check_grid(data: np.ndarray, spacing) -> tuple[float, float, float]:
    if data.ndim != 3:
        raise InvalidArgument(f"expected a 3D array, got shape {data.shape}")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise InvalidArgument(f"spacing must be three positive finite values, got {spacing}")
    return spacing


@dataclass
class Volume3D:
    """Scalar voxel grid with physical spacing (mm/voxel)."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    # Raw 348-byte header from the file this came from, if any; reused on
    # save so orientation fields survive a round trip.
    header: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.spacing = _check_grid(self.data, self.spacing)
        if not np.isfinite(self.data).all():
            raise InvalidArgument("volume intensities must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass
class StructureMask:
    """Binary voxel grid marking one deep-brain structure."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    structure_id: str
    header: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.spacing = _check_grid(self.data, self.spacing)
        if self.structure_id not in STRUCTURES:
            raise InvalidArgument(f"unknown structure_id {self.structure_id!r}")
        if self.data.dtype != np.uint8:
            bad = np.setdiff1d(np.unique(self.data), [0, 1])
            if bad.size:
                raise InvalidArgument(f"mask contains values other than 0/1: {bad[:5]}")
            self.data = self.data.astype(np.uint8)
        elif self.data.max(initial=0) > 1:
            raise InvalidArgument("mask contains values other than 0/1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def voxel_count(self) -> int:
        return int(self.data.sum())


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise CorruptFile(f"{path}: gzip stream is damaged: {exc}") from exc
    return raw


def load_nifti(path) -> Volume3D | StructureMask:
    """Read a single-file NIfTI-1 volume or mask.

    Returns a :class:`StructureMask` when the file is uint8 and its
    ``intent_name`` names one of the six structures (the convention
    :func:`save_nifti` uses), otherwise a :class:`Volume3D`.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise CorruptFile(f"{path}: file shorter than the 348-byte header")
    header = raw[:HEADER_SIZE]

    magic = header[344:348]
    if magic == _MAGIC_PAIR:
        raise UnsupportedFormat(f"{path}: two-file NIfTI ('ni1') is not supported")
    if magic != _MAGIC_SINGLE:
        raise UnsupportedFormat(f"{path}: bad magic {magic!r}, expected 'n+1'")
    sizeof_hdr = struct.unpack_from("<i", header, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise UnsupportedFormat(f"{path}: sizeof_hdr={sizeof_hdr}, not little-endian NIfTI-1")

    dim = struct.unpack_from("<8h", header, 40)
    if dim[0] != 3:
        raise UnsupportedFormat(f"{path}: expected 3D data, dim[0]={dim[0]}")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d <= 0 for d in shape):
        raise CorruptFile(f"{path}: non-positive dims {shape}")

    datatype = struct.unpack_from("<h", header, 70)[0]
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype} not in (2, 4, 16)")
    dtype = _DTYPES[datatype]

    pixdim = struct.unpack_from("<8f", header, 76)
    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    vox_offset = int(struct.unpack_from("<f", header, 108)[0])
    if vox_offset < HEADER_SIZE:
        vox_offset = HEADER_SIZE + 4

    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    if len(raw) < vox_offset + nbytes:
        raise CorruptFile(
            f"{path}: data section truncated ({len(raw) - vox_offset} bytes, need {nbytes})"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=vox_offset)
    # NIfTI stores the first axis fastest.
    data = flat.reshape(shape, order="F")

    intent_name = header[328:344].split(b"\x00", 1)[0].decode("ascii", "replace")
    if datatype == 2 and intent_name in STRUCTURES:
        return StructureMask(np.ascontiguousarray(data), spacing, intent_name, header=header)
    if datatype != 16:
        data = data.astype(np.float32)
    return Volume3D(np.ascontiguousarray(data), spacing, header=header)


def _build_header(template: bytes | None, shape, spacing, datatype: int, intent_name: str) -> bytes:
    hdr = bytearray(template) if template else bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, _BITPIX[datatype])
    pixdim = struct.unpack_from("<8f", hdr, 76)
    qfac = pixdim[0] if pixdim[0] in (-1.0, 1.0) else 1.0
    struct.pack_into("<8f", hdr, 76, qfac, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(HEADER_SIZE + 4))
    name = intent_name.encode("ascii")[:15]
    struct.pack_into("<16s", hdr, 328, name)
    struct.pack_into("<4s", hdr, 344, _MAGIC_SINGLE)
    return bytes(hdr)


def save_nifti(vol: Volume3D | StructureMask, path) -> None:
    """Write a volume (float32) or mask (uint8) as single-file NIfTI-1."""
    path = Path(path)
    if isinstance(vol, StructureMask):
        datatype, intent = 2, vol.structure_id
        payload = vol.data.astype("<u1", copy=False)
    elif isinstance(vol, Volume3D):
        datatype, intent = 16, ""
        payload = vol.data.astype("<f4", copy=False)
    else:
        raise InvalidArgument(f"cannot save object of type {type(vol).__name__}")

    header = _build_header(vol.header, vol.dims, vol.spacing, datatype, intent)
    blob = header + b"\x00\x00\x00\x00" + payload.tobytes(order="F")
    if path.suffix == ".gz":
        blob = gzip.compress(blob, compresslevel=1, mtime=0)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # Pixel-center mapping; exact identity when n_in == n_out.
    scale = n_in / n_out
    return (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5


def _resample_axis_linear(data: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = data.shape[axis]
    x = np.clip(_axis_coords(n_in, n_out), 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = x - i0
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n_out
    # a + w*(b-a) keeps constants exact.
    return a + w.reshape(shape) * (b - a)


def _resample_axis_nearest(data: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = data.shape[axis]
    idx = np.floor(_axis_coords(n_in, n_out) + 0.5).astype(np.intp)
    idx = np.clip(idx, 0, n_in - 1)
    return np.take(data, idx, axis=axis)


def resize_volume(vol, target_dims, mode: str = "trilinear"):
    """Resample to ``target_dims``, rescaling spacing to keep physical extent.

    Masks must use ``mode="nearest"`` so the output stays binary.
    """
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or any(d <= 0 for d in target_dims):
        raise InvalidArgument(f"target dims must be three positive integers, got {target_dims}")
    if mode not in ("trilinear", "nearest"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    is_mask = isinstance(vol, StructureMask)
    if is_mask and mode != "nearest":
        raise InvalidArgument("masks must be resized with mode='nearest'")

    data = vol.data
    if mode == "trilinear":
        data = data.astype(np.float64, copy=False)
    for axis in range(3):
        if data.shape[axis] == target_dims[axis]:
            continue
        if mode == "trilinear":
            data = _resample_axis_linear(data, target_dims[axis], axis)
        else:
            data = _resample_axis_nearest(data, target_dims[axis], axis)

    spacing = tuple(
        vol.spacing[k] * (vol.dims[k] / target_dims[k]) for k in range(3)
    )
    if is_mask:
        return StructureMask(np.ascontiguousarray(data), spacing, vol.structure_id, header=vol.header)
    out = np.ascontiguousarray(data.astype(vol.data.dtype if vol.data.dtype == np.float64 else np.float32))
    return Volume3D(out, spacing, header=vol.header)
