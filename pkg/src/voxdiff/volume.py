"""3D scalar volumes, binary masks, file I/O and basic preprocessing.

Arrays are indexed ``[x, y, z]``. On disk the payload is little-endian float32
with x varying fastest (Fortran order), as in NIfTI.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import VolumeFormatError

Shape3 = tuple[int, int, int]

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
NIFTI_FLOAT32 = 16
FORMATS = ("nifti1-raw", "f32-raw")


def _shape3(shape: Sequence[int]) -> Shape3:
    if len(shape) != 3:
        raise ValueError(f"expected a 3D shape, got {tuple(shape)}")
    out = tuple(int(s) for s in shape)
    if any(s < 1 for s in out):
        raise ValueError(f"shape components must be positive, got {out}")
    return out  # type: ignore[return-value]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D scalar field with voxel spacing in millimetres."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"Volume3 data must be 3D, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", spacing)
        if self.intensity_range is None:
            finite = data[np.isfinite(data)]
            rng = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
            object.__setattr__(self, "intensity_range", rng)
        else:
            lo, hi = self.intensity_range
            object.__setattr__(self, "intensity_range", (float(lo), float(hi)))

    @property
    def shape(self) -> Shape3:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray, intensity_range: tuple[float, float] | None = None) -> Volume3:
        return Volume3(data, self.spacing, intensity_range)


@dataclass(frozen=True)
class MaskVolume:
    """Immutable binary 3D field. Value 1 marks known voxels unless stated otherwise."""

    data: np.ndarray
    spacing: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self) -> None:
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise ValueError(f"MaskVolume data must be 3D, got shape {raw.shape}")
        if raw.dtype != np.bool_:
            if not np.all((raw == 0) | (raw == 1)):
                raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", _frozen(np.array(raw, dtype=bool, copy=True)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> Shape3:
        return self.data.shape  # type: ignore[return-value]

    def count(self) -> int:
        return int(self.data.sum())

    def invert(self) -> MaskVolume:
        return MaskVolume(~self.data, self.spacing)


# --------------------------------------------------------------------------- I/O


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` via a temp file in the same directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _payload(data: np.ndarray) -> bytes:
    return np.asarray(data, dtype="<f4").tobytes(order="F")


def _nifti_header(v: Volume3) -> bytes:
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    nx, ny, nz = v.shape
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, NIFTI_FLOAT32, 32)
    struct.pack_into("<8f", hdr, 76, 1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(NIFTI_VOX_OFFSET))
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    lo, hi = v.intensity_range
    struct.pack_into("<ff", hdr, 124, hi, lo)  # cal_max, cal_min
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def _read_nifti(path: Path) -> Volume3:
    raw = path.read_bytes()
    if len(raw) < NIFTI_HEADER_SIZE:
        raise VolumeFormatError(f"{path}: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        raise VolumeFormatError(
            f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348 little-endian"
        )
    if raw[344:348] != b"n+1\x00":
        raise VolumeFormatError(f"{path}: magic {raw[344:348]!r} is not single-file 'n+1'")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise VolumeFormatError(f"{path}: only 3D volumes are supported, dim={dim}")
    shape = tuple(int(d) if i < ndim else 1 for i, d in enumerate(dim[1:4]))
    if any(s < 1 for s in shape):
        raise VolumeFormatError(f"{path}: non-positive dimension in {dim}")
    datatype, bitpix = struct.unpack_from("<hh", raw, 70)
    if datatype != NIFTI_FLOAT32 or bitpix != 32:
        raise VolumeFormatError(f"{path}: datatype {datatype} unsupported, only float32 (16)")
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<ff", raw, 112)
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise VolumeFormatError(f"{path}: intensity scaling (slope={slope}, inter={inter}) unsupported")
    offset = int(vox_offset)
    if offset != vox_offset or offset < NIFTI_VOX_OFFSET:
        raise VolumeFormatError(f"{path}: vox_offset {vox_offset} invalid (need integer >= 352)")
    expected = shape[0] * shape[1] * shape[2] * 4
    if len(raw) - offset != expected:
        raise VolumeFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=expected // 4, offset=offset)
    data = data.reshape(shape, order="F")
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    cal_max, cal_min = struct.unpack_from("<ff", raw, 124)
    declared = (float(cal_min), float(cal_max)) if cal_max > cal_min else None
    return Volume3(data, spacing, declared)  # type: ignore[arg-type]


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _read_f32(path: Path) -> Volume3:
    meta_path = _sidecar(path)
    if not meta_path.exists():
        raise VolumeFormatError(f"{path}: missing sidecar {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        shape = _shape3(meta["shape"])
        spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{meta_path}: malformed sidecar ({exc})") from exc
    raw = path.read_bytes()
    expected = shape[0] * shape[1] * shape[2] * 4
    if len(raw) != expected:
        raise VolumeFormatError(f"{path}: payload is {len(raw)} bytes, sidecar implies {expected}")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape, order="F")
    declared = meta.get("intensity_range")
    return Volume3(data, spacing, tuple(declared) if declared else None)  # type: ignore[arg-type]


def _guess_format(path: Path) -> str:
    return "nifti1-raw" if path.suffix == ".nii" else "f32-raw"


def read_volume(path: str | os.PathLike, format: str | None = None) -> Volume3:
    """Read a float32 volume. ``format`` defaults from the extension (.nii → NIfTI)."""
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt not in FORMATS:
        raise VolumeFormatError(f"unknown volume format {fmt!r}")
    if not path.exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    return _read_nifti(path) if fmt == "nifti1-raw" else _read_f32(path)


def write_volume(v: Volume3, path: str | os.PathLike, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "nifti1-raw":
        atomic_write_bytes(path, _nifti_header(v) + b"\x00" * 4 + _payload(v.data))
    elif fmt == "f32-raw":
        meta = {
            "shape": list(v.shape),
            "spacing": list(v.spacing),
            "intensity_range": list(v.intensity_range),
        }
        atomic_write_bytes(path, _payload(v.data))
        atomic_write_bytes(_sidecar(path), json.dumps(meta, indent=2).encode())
    else:
        raise VolumeFormatError(f"unknown volume format {fmt!r}")


def read_mask(path: str | os.PathLike, format: str | None = None) -> MaskVolume:
    v = read_volume(path, format)
    if not np.all((v.data == 0) | (v.data == 1)):
        raise VolumeFormatError(f"{path}: mask contains values other than 0 and 1")
    return MaskVolume(v.data, v.spacing)


def write_mask(m: MaskVolume, path: str | os.PathLike, format: str | None = None) -> None:
    write_volume(Volume3(m.data.astype(np.float64), m.spacing, (0.0, 1.0)), path, format)


# ------------------------------------------------------------------ preprocessing


def normalize_intensity(v: Volume3) -> Volume3:
    """Affinely rescale finite values so the minimum is 0 and the maximum 1.

    Constant volumes map to all zeros; non-finite voxels are left as they are.
    """
    finite = np.isfinite(v.data)
    if not finite.any():
        raise ValueError("cannot normalize a volume without finite values")
    lo = float(v.data[finite].min())
    hi = float(v.data[finite].max())
    if hi == lo:
        out = np.where(finite, 0.0, v.data)
    else:
        out = np.where(finite, (v.data - lo) / (hi - lo), v.data)
        # rounding can leave values an ulp outside [0, 1]
        out[finite] = np.clip(out[finite], 0.0, 1.0)
    return v.with_data(out, (0.0, 1.0))


def pad_to(v: Volume3, target_shape: Sequence[int]) -> Volume3:
    """Zero-pad at the high end of each axis."""
    target = _shape3(target_shape)
    if any(t < s for t, s in zip(target, v.shape)):
        raise ValueError(f"pad target {target} smaller than shape {v.shape}")
    out = np.zeros(target, dtype=np.float64)
    nx, ny, nz = v.shape
    out[:nx, :ny, :nz] = v.data
    return Volume3(out, v.spacing, v.intensity_range)


def crop_to(v: Volume3, target_shape: Sequence[int]) -> Volume3:
    """Remove voxels from the high end of each axis."""
    target = _shape3(target_shape)
    if any(t > s for t, s in zip(target, v.shape)):
        raise ValueError(f"crop target {target} larger than shape {v.shape}")
    return Volume3(v.data[: target[0], : target[1], : target[2]], v.spacing, v.intensity_range)


def pad_mask_to(m: MaskVolume, target_shape: Sequence[int], fill: bool = False) -> MaskVolume:
    target = _shape3(target_shape)
    if any(t < s for t, s in zip(target, m.shape)):
        raise ValueError(f"pad target {target} smaller than shape {m.shape}")
    out = np.full(target, fill, dtype=bool)
    nx, ny, nz = m.shape
    out[:nx, :ny, :nz] = m.data
    return MaskVolume(out, m.spacing)


def padded_shape(shape: Sequence[int], multiple: int) -> Shape3:
    """Smallest shape >= ``shape`` divisible by ``multiple`` on every axis."""
    return tuple(-(-int(s) // multiple) * multiple for s in shape)  # type: ignore[return-value]


def _factor3(factor: int | Sequence[int]) -> Shape3:
    f = (factor,) * 3 if isinstance(factor, (int, np.integer)) else tuple(factor)
    f = _shape3(f)
    return f


def nn_downsample(v: Volume3, factor: int | Sequence[int]) -> Volume3:
    """Corner-anchored nearest neighbour: output (i, j, k) = input (f·i, f·j, f·k)."""
    f = _factor3(factor)
    if any(s % fi for s, fi in zip(v.shape, f)):
        raise ValueError(f"shape {v.shape} not divisible by factor {f}")
    data = v.data[:: f[0], :: f[1], :: f[2]]
    spacing = tuple(s * fi for s, fi in zip(v.spacing, f))
    return Volume3(data, spacing, v.intensity_range)  # type: ignore[arg-type]


def block_all(m: MaskVolume, factor: int | Sequence[int]) -> MaskVolume:
    """Downsample a mask, keeping a voxel only if its whole footprint is set."""
    f = _factor3(factor)
    if any(s % fi for s, fi in zip(m.shape, f)):
        raise ValueError(f"shape {m.shape} not divisible by factor {f}")
    lx, ly, lz = (s // fi for s, fi in zip(m.shape, f))
    blocks = m.data.reshape(lx, f[0], ly, f[1], lz, f[2])
    spacing = tuple(s * fi for s, fi in zip(m.spacing, f))
    return MaskVolume(blocks.all(axis=(1, 3, 5)), spacing)  # type: ignore[arg-type]


_FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


def dilate(m: MaskVolume, iterations: int = 1) -> MaskVolume:
    """Binary dilation with the 6-connected (face-neighbour) structuring element."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0 or not m.data.any():
        return MaskVolume(m.data, m.spacing)
    out = ndimage.binary_dilation(m.data, structure=_FACE_STRUCTURE, iterations=iterations)
    return MaskVolume(out, m.spacing)
