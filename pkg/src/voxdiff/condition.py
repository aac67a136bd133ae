"""Conditioning stack: one-hot tissue channels plus tumor concentration."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import VolumeFormatError
from .volume import Volume3, atomic_write_bytes, nn_downsample, read_volume, write_volume

CHANNELS = ("csf", "gm", "wm", "tumor_concentration")
TISSUE_LABELS = {1: "csf", 2: "gm", 3: "wm"}


@dataclass(frozen=True)
class ConditioningField:
    """Four latent-resolution planes stacked as ``data[channel, x, y, z]``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4 or data.shape[0] != len(CHANNELS):
            raise ValueError(f"conditioning data must have shape (4, lx, ly, lz), got {data.shape}")
        tissue = data[:3]
        if not np.all((tissue == 0) | (tissue == 1)) or np.any(tissue.sum(axis=0) > 1):
            raise ValueError("tissue channels must be one-hot (or all zero for background)")
        conc = data[3]
        if not np.all((conc >= 0) & (conc <= 1)):
            raise ValueError("tumor concentration must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]  # type: ignore[return-value]

    @property
    def channels(self) -> list[Volume3]:
        return [Volume3(self.data[k], self.spacing) for k in range(len(CHANNELS))]

    @property
    def tumor(self) -> np.ndarray:
        return self.data[3]


def one_hot_tissue(labels: np.ndarray) -> np.ndarray:
    lab = np.asarray(labels)
    if not np.all(np.isin(lab, (0, 1, 2, 3))):
        bad = np.unique(lab[~np.isin(lab, (0, 1, 2, 3))])
        raise ValueError(f"unknown tissue label value(s): {bad[:5].tolist()}")
    return np.stack([(lab == k).astype(np.float64) for k in (1, 2, 3)])


def build_condition(tissue_labels: Volume3, tumor_conc: Volume3 | None, latent_factor: int = 4) -> ConditioningField:
    """One-hot encode labels and nearest-neighbour downsample all four channels.

    ``tumor_conc=None`` is shorthand for an all-zero concentration.
    """
    if tumor_conc is None:
        tumor_conc = tissue_labels.with_data(np.zeros(tissue_labels.shape))
    if tissue_labels.shape != tumor_conc.shape:
        raise ValueError(f"label shape {tissue_labels.shape} != concentration shape {tumor_conc.shape}")
    conc = tumor_conc.data
    if not np.all((conc >= 0) & (conc <= 1)):
        raise ValueError("tumor concentration must lie in [0, 1]")
    planes = list(one_hot_tissue(tissue_labels.data)) + [conc]
    small = [nn_downsample(Volume3(p, tissue_labels.spacing), latent_factor) for p in planes]
    return ConditioningField(np.stack([v.data for v in small]), small[0].spacing)


def zero_tumor(c: ConditioningField) -> ConditioningField:
    """Same field with the concentration channel set to zero (healthy inpainting)."""
    data = np.array(c.data)
    data[3] = 0.0
    return ConditioningField(data, c.spacing)


def save_condition(c: ConditioningField, directory: str | os.PathLike) -> Path:
    """Write four f32-raw planes and ``condition.json`` naming the channel order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for name, plane in zip(CHANNELS, c.channels):
        fname = f"{name}.f32"
        write_volume(plane, directory / fname, "f32-raw")
        files.append(fname)
    manifest = {
        "kind": "conditioning",
        "channel_order": list(CHANNELS),
        "files": files,
        "latent_shape": list(c.latent_shape),
        "spacing": list(c.spacing),
    }
    path = directory / "condition.json"
    atomic_write_bytes(path, json.dumps(manifest, indent=2).encode())
    return path


def load_condition(manifest_path: str | os.PathLike) -> ConditioningField:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"condition manifest not found: {manifest_path}")
    meta = json.loads(manifest_path.read_text())
    order = meta.get("channel_order")
    if order != list(CHANNELS):
        raise VolumeFormatError(f"{manifest_path}: channel order {order} != {list(CHANNELS)}")
    planes = [read_volume(manifest_path.parent / f, "f32-raw") for f in meta["files"]]
    return ConditioningField(np.stack([p.data for p in planes]), planes[0].spacing)
