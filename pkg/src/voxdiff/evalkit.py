"""Masked-region image quality metrics, evaluation masks and summary tables."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import PlacementError
from .volume import MaskVolume, Volume3, dilate

METRICS = ("ssim", "psnr", "mae", "mse", "rmse", "msle")
PSNR_CAP = 100.0
MSE_FLOOR = 1e-10

# Published reference values (mean, median, std), shown for context only.
REFERENCE_TABLES = {
    "healthy": {
        "ssim": (0.754, 0.746, 0.134),
        "psnr": (18.542, 18.140, 3.121),
        "mae": (0.088, 0.084, 0.032),
        "mse": (0.017, 0.015, 0.011),
        "rmse": (0.123, 0.121, 0.040),
        "msle": (0.007, 0.006, 0.005),
    },
    "tumor": {
        "ssim": (0.578, 0.576, 0.090),
        "psnr": (17.360, 17.664, 2.262),
        "mae": (0.104, 0.095, 0.041),
        "mse": (0.022, 0.017, 0.024),
        "rmse": (0.141, 0.131, 0.047),
        "msle": (0.009, 0.007, 0.011),
    },
}

# Postprocessing ablation means: inpainting only, + matching, + matching and blending.
REFERENCE_ABLATION = {
    "healthy": {
        "I": {"ssim": 0.715, "psnr": 14.615, "mae": 0.153, "mse": 0.045, "rmse": 0.198, "msle": 0.016},
        "I+HE": {"ssim": 0.735, "psnr": 17.514, "mae": 0.097, "mse": 0.021, "rmse": 0.138, "msle": 0.009},
        "I+HE+PB": {"ssim": 0.754, "psnr": 18.542, "mae": 0.088, "mse": 0.017, "rmse": 0.123, "msle": 0.007},
    },
    "tumor": {
        "I": {"ssim": 0.549, "psnr": 13.864, "mae": 0.175, "mse": 0.054, "rmse": 0.217, "msle": 0.019},
        "I+HE": {"ssim": 0.555, "psnr": 16.767, "mae": 0.110, "mse": 0.025, "rmse": 0.151, "msle": 0.010},
        "I+HE+PB": {"ssim": 0.578, "psnr": 17.360, "mae": 0.104, "mse": 0.022, "rmse": 0.141, "msle": 0.009},
    },
}


@dataclass
class MetricEntry:
    subject: str
    ssim: float
    psnr: float
    mae: float
    mse: float
    rmse: float
    msle: float
    region: str = "healthy"

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def psnr_from_mse(mse: float, data_range: float = 1.0) -> float:
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return 10.0 * math.log10(data_range * data_range / mse)


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = 7, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM with a uniform cubic window clipped at the array bounds.

    Local (co)variances use the population normalization.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("SSIM window must be a positive odd size")
    r = window // 2
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    count = kernels.box_sum3d(np.ones(x.shape), r)
    mx = kernels.box_sum3d(x, r) / count
    my = kernels.box_sum3d(y, r) / count
    vx = kernels.box_sum3d(x * x, r) / count - mx * mx
    vy = kernels.box_sum3d(y * y, r) / count - my * my
    cxy = kernels.box_sum3d(x * y, r) / count - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def _bbox(mask: np.ndarray, margin: int) -> tuple[slice, ...]:
    idx = np.nonzero(mask)
    return tuple(
        slice(max(int(i.min()) - margin, 0), min(int(i.max()) + margin + 1, n))
        for i, n in zip(idx, mask.shape)
    )


def masked_metrics(
    pred: Volume3,
    gt: Volume3,
    region: MaskVolume,
    subject: str = "",
    ssim_window: int = 7,
    region_name: str = "healthy",
) -> MetricEntry:
    """Error metrics over region voxels; SSIM averaged over windows centred in the region."""
    if not (pred.shape == gt.shape == region.shape):
        raise ValueError(f"shape mismatch: {pred.shape}, {gt.shape}, {region.shape}")
    m = region.data
    if not m.any():
        raise ValueError("evaluation region is empty")
    p, g = pred.data[m], gt.data[m]
    if not (np.all((p >= 0) & (p <= 1)) and np.all((g >= 0) & (g <= 1))):
        raise ValueError("metric inputs must lie in [0, 1] inside the region")
    diff = p - g
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    log_diff = np.log1p(p) - np.log1p(g)
    msle = float(np.mean(log_diff * log_diff))
    # windows of region-centred voxels fit inside the padded bounding box
    box = _bbox(m, ssim_window // 2)
    smap = ssim_map(pred.data[box], gt.data[box], ssim_window)
    ssim = float(np.mean(smap[m[box]]))
    return MetricEntry(subject, ssim, psnr_from_mse(mse), mae, mse, math.sqrt(mse), msle, region_name)


# ------------------------------------------------------------------ aggregation


@dataclass
class MetricReport:
    entries: list[MetricEntry]
    summary: dict[str, dict[str, float]]
    ddof: int = 0

    def rows(self) -> list[dict]:
        out = [asdict(e) for e in self.entries]
        for stat in ("mean", "median", "std"):
            row = {"subject": stat, "region": "summary"}
            row.update({m: self.summary[m][stat] for m in METRICS})
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["subject", "region", *METRICS], lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: row[k] for k in ["subject", "region", *METRICS]})
        return buf.getvalue()

    def to_json(self, reference: str | None = None) -> str:
        payload = {
            "entries": [asdict(e) for e in self.entries],
            "summary": self.summary,
            "std_ddof": self.ddof,
        }
        if reference is not None:
            payload["reference"] = {
                m: dict(zip(("mean", "median", "std"), v)) for m, v in REFERENCE_TABLES[reference].items()
            }
        return json.dumps(payload, indent=2)


def summarize(values: Sequence[float], ddof: int = 0) -> dict[str, float]:
    if not values:
        raise ValueError("cannot summarize an empty list")
    arr = np.asarray(values, dtype=np.float64)
    if ddof >= arr.size:
        std = 0.0
    else:
        std = float(np.std(arr, ddof=ddof))
    return {"mean": float(np.mean(arr)), "median": float(statistics.median(arr.tolist())), "std": std}


def aggregate_report(entries: Iterable[MetricEntry], ddof: int = 0) -> MetricReport:
    """Mean, median (midpoint for even counts) and std (population by default)."""
    entries = list(entries)
    if not entries:
        raise ValueError("no metric entries to aggregate")
    summary = {m: summarize([getattr(e, m) for e in entries], ddof) for m in METRICS}
    return MetricReport(entries, summary, ddof)


# ----------------------------------------------------------------- mask generation


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "random_healthy"
    semi_axes: tuple[float, float, float] = (8.0, 8.0, 8.0)
    seed: int = 0
    tumor_dilation: int = 0
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in ("tumor_region", "random_healthy"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if len(self.semi_axes) != 3 or not all(a > 0 for a in self.semi_axes):
            raise ValueError("ellipsoid semi-axes must be three positive values")


def ellipsoid_offsets(semi_axes: Sequence[float]) -> np.ndarray:
    """Integer offsets (k, 3) of voxels inside an axis-aligned ellipsoid at the origin."""
    a = np.asarray(semi_axes, dtype=np.float64)
    r = np.floor(a).astype(int)
    grid = np.mgrid[-r[0] : r[0] + 1, -r[1] : r[1] + 1, -r[2] : r[2] + 1].reshape(3, -1).T
    inside = ((grid / a) ** 2).sum(axis=1) <= 1.0
    return grid[inside]


def generate_masks(
    gt: Volume3,
    tumor_seg: MaskVolume,
    spec: MaskSpec,
    rng: np.random.Generator | None = None,
) -> tuple[MaskVolume, MaskVolume]:
    """Tumor mask (optionally dilated) and a random healthy ellipsoid.

    The ellipsoid lies entirely in non-black voxels of ``gt`` and does not
    touch the tumor mask. Placement is rejection-sampled over brain voxels.
    """
    if gt.shape != tumor_seg.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {tumor_seg.shape}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    tumor = dilate(tumor_seg, spec.tumor_dilation) if spec.tumor_dilation else tumor_seg
    allowed = (gt.data > 0) & ~tumor.data
    centers = np.argwhere(allowed)
    offsets = ellipsoid_offsets(spec.semi_axes)
    shape = np.asarray(gt.shape)
    if centers.size:
        for _ in range(spec.max_attempts):
            c = centers[int(rng.integers(len(centers)))]
            vox = offsets + c
            if np.any(vox < 0) or np.any(vox >= shape):
                continue
            if allowed[vox[:, 0], vox[:, 1], vox[:, 2]].all():
                healthy = np.zeros(gt.shape, dtype=bool)
                healthy[vox[:, 0], vox[:, 1], vox[:, 2]] = True
                return tumor, MaskVolume(healthy, gt.spacing)
    raise PlacementError(
        f"no feasible healthy mask placement after {spec.max_attempts} attempts "
        f"(semi-axes {tuple(spec.semi_axes)}, {len(centers)} candidate centres)"
    )
