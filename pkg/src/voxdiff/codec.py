"""Latent codecs with a fixed 4-channel, 4x-per-axis geometry.

:class:`BlockMomentCodec` projects every 4x4x4 block onto four orthonormal
vectors: the constant vector and the three first-order ramps along x, y, z.
It is linear and exactly invertible on block-wise affine volumes, which makes
every downstream sampler property testable without a trained autoencoder.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import VolumeFormatError
from .volume import Volume3, atomic_write_bytes, read_volume, write_volume

BLOCK = 4
LATENT_CHANNELS = 4


@dataclass(frozen=True)
class LatentVolume:
    """Latent tensor ``data[channel, x, y, z]``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4:
            raise ValueError(f"latent data must be 4D (channels, x, y, z), got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]  # type: ignore[return-value]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


class LatentCodec(Protocol):
    def encode(self, x: Volume3) -> LatentVolume: ...

    def decode(self, z: LatentVolume) -> Volume3: ...


def block_basis() -> np.ndarray:
    """The four orthonormal 4x4x4 basis blocks, shape (4, 4, 4, 4)."""
    r = np.arange(BLOCK, dtype=np.float64) - (BLOCK - 1) / 2.0
    ones = np.ones(BLOCK)
    const = np.ones((BLOCK,) * 3)
    ramps = [
        np.einsum("i,j,k->ijk", r, ones, ones),
        np.einsum("i,j,k->ijk", ones, r, ones),
        np.einsum("i,j,k->ijk", ones, ones, r),
    ]
    basis = np.stack([const] + ramps)
    norms = np.sqrt((basis**2).sum(axis=(1, 2, 3)))
    return basis / norms[:, None, None, None]


_BASIS = block_basis()


def _blocks(data: np.ndarray) -> np.ndarray:
    nx, ny, nz = data.shape
    if nx % BLOCK or ny % BLOCK or nz % BLOCK:
        raise ValueError(f"shape {data.shape} not divisible by {BLOCK} on every axis; pad first")
    return data.reshape(nx // BLOCK, BLOCK, ny // BLOCK, BLOCK, nz // BLOCK, BLOCK)


def block_moment_encode(x: Volume3) -> LatentVolume:
    coeffs = np.einsum("aibjck,nijk->nabc", _blocks(x.data), _BASIS)
    spacing = tuple(s * BLOCK for s in x.spacing)
    return LatentVolume(coeffs, spacing)  # type: ignore[arg-type]


def block_moment_decode(z: LatentVolume) -> Volume3:
    if z.channels != LATENT_CHANNELS:
        raise ValueError(f"block-moment latents have {LATENT_CHANNELS} channels, got {z.channels}")
    lx, ly, lz = z.shape
    blocks = np.einsum("nabc,nijk->aibjck", z.data, _BASIS)
    spacing = tuple(s / BLOCK for s in z.spacing)
    return Volume3(blocks.reshape(lx * BLOCK, ly * BLOCK, lz * BLOCK), spacing)  # type: ignore[arg-type]


class BlockMomentCodec:
    name = "block-moment"
    factor = BLOCK

    def encode(self, x: Volume3) -> LatentVolume:
        return block_moment_encode(x)

    def decode(self, z: LatentVolume) -> Volume3:
        return block_moment_decode(z)


class IdentityCodec:
    """One-channel latent holding the image voxels unchanged."""

    name = "identity"
    factor = 1

    def encode(self, x: Volume3) -> LatentVolume:
        return LatentVolume(x.data[None], x.spacing)

    def decode(self, z: LatentVolume) -> Volume3:
        if z.channels != 1:
            raise ValueError("identity codec latents have exactly one channel")
        return Volume3(z.data[0], z.spacing)


def identity_codec() -> IdentityCodec:
    return IdentityCodec()


def get_codec(name: str) -> BlockMomentCodec | IdentityCodec:
    if name == "block-moment":
        return BlockMomentCodec()
    if name == "identity":
        return IdentityCodec()
    raise ValueError(f"unknown codec {name!r}")


def save_latent(z: LatentVolume, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(z.channels):
        fname = f"latent_{k}.f32"
        write_volume(Volume3(z.data[k], z.spacing), directory / fname, "f32-raw")
        files.append(fname)
    manifest = {"kind": "latent", "channels": z.channels, "files": files, "shape": list(z.shape)}
    path = directory / "latent.json"
    atomic_write_bytes(path, json.dumps(manifest, indent=2).encode())
    return path


def load_latent(manifest_path: str | os.PathLike) -> LatentVolume:
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    if meta.get("kind") != "latent":
        raise VolumeFormatError(f"{manifest_path}: not a latent manifest")
    planes = [read_volume(manifest_path.parent / f, "f32-raw") for f in meta["files"]]
    return LatentVolume(np.stack([p.data for p in planes]), planes[0].spacing)
