"""Image-space harmonization: Poisson blending and histogram matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SolverError
from .volume import MaskVolume, Volume3

_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


@dataclass(frozen=True)
class BlendConfig:
    cg_tolerance: float = 1e-6
    cg_max_iters: int | None = None  # default: 10·sqrt(n) + 1000

    def __post_init__(self) -> None:
        if not self.cg_tolerance > 0:
            raise ValueError("cg_tolerance must be positive")
        if self.cg_max_iters is not None and self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be at least 1")

    def max_iters(self, n: int) -> int:
        if self.cg_max_iters is not None:
            return self.cg_max_iters
        return int(10 * math.sqrt(n)) + 1000


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    residual_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class RegionSystem:
    """Index structure of the 6-neighbour Laplacian restricted to a voxel set."""

    coords: tuple[np.ndarray, np.ndarray, np.ndarray]
    neighbors: np.ndarray  # (6, n); value n = outside the region

    @property
    def size(self) -> int:
        return self.neighbors.shape[1]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return kernels.laplacian_matvec(x, self.neighbors)


def region_system(region: np.ndarray) -> RegionSystem:
    faces = (region[0], region[-1], region[:, 0], region[:, -1], region[:, :, 0], region[:, :, -1])
    if any(f.any() for f in faces):
        raise ValueError("blend region touches the volume boundary")
    coords = np.nonzero(region)
    n = coords[0].size
    index = np.full(region.shape, n, dtype=np.int64)
    index[coords] = np.arange(n, dtype=np.int64)
    nbr = np.empty((6, n), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(_OFFSETS):
        nbr[k] = index[coords[0] + dx, coords[1] + dy, coords[2] + dz]
    return RegionSystem(coords, nbr)


def conjugate_gradient(
    matvec, b: np.ndarray, x0: np.ndarray, tol: float, max_iters: int
) -> CGResult:
    """Solve an SPD system to relative residual ``||b - Ax|| / ||b|| <= tol``."""
    bnorm = math.sqrt(float(np.dot(b, b)))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, [0.0])
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rr = float(np.dot(r, r))
    history = [math.sqrt(rr) / bnorm]
    it = 0
    while history[-1] > tol:
        if it >= max_iters:
            raise SolverError(
                f"conjugate gradient stopped after {it} iterations at relative residual {history[-1]:.3e}",
                residual=history[-1],
                iterations=it,
            )
        ap = matvec(p)
        alpha = rr / float(np.dot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.dot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        history.append(math.sqrt(rr) / bnorm)
    # the recursive residual can drift from the true one; report the true value
    true_res = math.sqrt(float(np.sum((b - matvec(x)) ** 2))) / bnorm
    if true_res > tol:
        raise SolverError(f"true relative residual {true_res:.3e} exceeds tolerance", true_res, it)
    return CGResult(x, it, true_res, history)


def poisson_blend(
    target: Volume3, source: Volume3, region: MaskVolume, cfg: BlendConfig | None = None,
    *, return_info: bool = False,
):
    """Solve ``lap f = lap source`` inside ``region`` with ``f = target`` on its border.

    Outside the region the result is ``target`` bit for bit.
    """
    cfg = cfg or BlendConfig()
    if not (target.shape == source.shape == region.shape):
        raise ValueError(f"shape mismatch: {target.shape}, {source.shape}, {region.shape}")
    mask = region.data
    out = np.array(target.data)
    if not mask.any():
        vol = target.with_data(out, target.intensity_range)
        return (vol, CGResult(np.empty(0), 0, 0.0, [0.0])) if return_info else vol
    system = region_system(mask)
    cx, cy, cz = system.coords
    src, tgt = source.data, target.data
    # guidance: negative Laplacian of the source at each region voxel
    b = 6.0 * src[cx, cy, cz]
    for dx, dy, dz in _OFFSETS:
        b -= src[cx + dx, cy + dy, cz + dz]
    # Dirichlet values from neighbours outside the region
    for k, (dx, dy, dz) in enumerate(_OFFSETS):
        outside = system.neighbors[k] == system.size
        b[outside] += tgt[cx[outside] + dx, cy[outside] + dy, cz[outside] + dz]
    res = conjugate_gradient(
        system.matvec, b, src[cx, cy, cz].astype(np.float64), cfg.cg_tolerance, cfg.max_iters(system.size)
    )
    out[cx, cy, cz] = res.x
    vol = target.with_data(out, target.intensity_range)
    return (vol, res) if return_info else vol


# ------------------------------------------------------------ histogram matching


def _mid_cdf(sorted_vals: np.ndarray, queries: np.ndarray) -> np.ndarray:
    lo = np.searchsorted(sorted_vals, queries, side="left")
    hi = np.searchsorted(sorted_vals, queries, side="right")
    return (lo + hi) / (2.0 * sorted_vals.size)


def quantile_map(generated: np.ndarray, reference: np.ndarray, bins: int | None = 256):
    """Monotone map sending the distribution of ``generated`` onto ``reference``.

    Returns a function of an array. Each value is sent to the reference
    quantile at its mid-rank probability; with ``bins`` the map is evaluated
    at the centres of occupied bins and linearly interpolated in between.
    """
    gen = np.sort(np.asarray(generated, dtype=np.float64).ravel())
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())

    def ref_quantile(p: np.ndarray) -> np.ndarray:
        return np.quantile(ref, np.clip(p, 0.0, 1.0), method="inverted_cdf")

    if bins is None:
        return lambda x: ref_quantile(_mid_cdf(gen, np.asarray(x, dtype=np.float64)))
    if bins < 1:
        raise ValueError("bins must be positive or None")
    lo, hi = gen[0], gen[-1]
    if hi == lo:
        value = ref_quantile(np.array([0.5]))[0]
        return lambda x: np.full(np.shape(x), value)
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(gen, edges)
    cum = np.concatenate(([0], np.cumsum(counts)))
    p = (cum[:-1] + cum[1:]) / (2.0 * gen.size)
    centers = 0.5 * (edges[:-1] + edges[1:])
    # empty bins carry no rank information; knots come from occupied bins only
    occupied = counts > 0
    centers, p = centers[occupied], p[occupied]
    mapped = ref_quantile(p)
    return lambda x: np.interp(np.asarray(x, dtype=np.float64), centers, mapped)


def histogram_match(
    generated: Volume3, reference: Volume3, black_threshold: float = 0.0, bins: int | None = 256
) -> Volume3:
    """Match the non-black intensity distribution of ``generated`` to ``reference``.

    Voxels at or below ``black_threshold`` pass through unchanged.
    """
    gmask = generated.data > black_threshold
    rvals = reference.data[reference.data > black_threshold]
    if gmask.sum() < 2 or rvals.size < 2:
        raise ValueError("histogram matching needs at least 2 non-black voxels in each input")
    fn = quantile_map(generated.data[gmask], rvals, bins)
    out = np.array(generated.data)
    out[gmask] = fn(generated.data[gmask])
    return generated.with_data(out)


# ------------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class PostprocessConfig:
    blend: bool = True
    match: bool = True
    order: str = "he-first"  # or "pb-first"
    black_threshold: float = 0.0
    bins: int | None = 256
    blend_cfg: BlendConfig = field(default_factory=BlendConfig)

    def __post_init__(self) -> None:
        if self.order not in ("he-first", "pb-first"):
            raise ValueError(f"order must be 'he-first' or 'pb-first', got {self.order!r}")


def composite(generated: Volume3, known: Volume3, region: MaskVolume) -> Volume3:
    """Generated voxels inside ``region``, known voxels elsewhere."""
    return known.with_data(np.where(region.data, generated.data, known.data))


def harmonize(
    generated: Volume3, known: Volume3, region: MaskVolume, cfg: PostprocessConfig | None = None
) -> Volume3:
    """Composite the generated region into ``known`` with optional matching and blending.

    Histogram matching remaps ``generated`` towards the non-black intensities
    of ``known``; Poisson blending then takes ``known`` as the boundary and the
    (matched) generated volume as guidance. With ``order='pb-first'`` the
    blend happens first and matching is applied to the blended region.
    """
    cfg = cfg or PostprocessConfig()
    gen = generated
    if cfg.order == "he-first":
        if cfg.match:
            gen = histogram_match(gen, known, cfg.black_threshold, cfg.bins)
        if cfg.blend:
            return poisson_blend(known, gen, region, cfg.blend_cfg)
        return composite(gen, known, region)
    if cfg.blend:
        gen = poisson_blend(known, gen, region, cfg.blend_cfg)
    if cfg.match:
        gen = histogram_match(gen, known, cfg.black_threshold, cfg.bins)
    return composite(gen, known, region)
