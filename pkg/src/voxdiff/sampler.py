"""Forward noising, the reverse update, known-region injection and RePaint.

All operations accept latents as :class:`~voxdiff.codec.LatentVolume` or as
plain arrays shaped ``(channels, x, y, z)``. Masks live on the latent grid
``(x, y, z)`` and broadcast over channels; 1 marks known voxels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .codec import LatentVolume
from .condition import ConditioningField
from .denoiser import Denoiser, predict_noise
from .schedule import NoiseSchedule, RePaintPlan, repaint_plan
from .volume import MaskVolume, dilate


@dataclass(frozen=True)
class SamplerConfig:
    eta: float = 1.0
    T_sample: int = 250
    jump_length: int = 10
    n_resample: int = 10
    seed: int = 0
    dilate_unknown: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if min(self.T_sample, self.jump_length, self.n_resample) < 1:
            raise ValueError("T_sample, jump_length and n_resample must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _arr(z) -> np.ndarray:
    return z.data if isinstance(z, LatentVolume) else np.asarray(z, dtype=np.float64)


def _wrap(like, data: np.ndarray):
    return LatentVolume(data, like.spacing) if isinstance(like, LatentVolume) else data


def _mask_arr(m) -> np.ndarray:
    return m.data if isinstance(m, MaskVolume) else np.asarray(m).astype(bool)


def forward_diffuse(z_0, t: int, eps, s: NoiseSchedule):
    """``sqrt(abar_t)·z_0 + sqrt(1 - abar_t)·eps``; returns ``z_0`` itself at t = 0."""
    z0, e = _arr(z_0), _arr(eps)
    if z0.shape != e.shape:
        raise ValueError(f"shape mismatch: z_0 {z0.shape} vs eps {e.shape}")
    ab = s.abar(t)
    if t == 0:
        return _wrap(z_0, z0.copy())
    return _wrap(z_0, math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * e)


def renoise_step(z, t: int, s: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One forward kernel ``q(z_{t+1} | z_t)`` of the (possibly respaced) schedule."""
    s.check_t(t + 1)
    a = s.abar(t + 1) / s.abar(t)
    za = _arr(z)
    return math.sqrt(a) * za + math.sqrt(1.0 - a) * rng.standard_normal(za.shape)


def sigma(s: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Noise scale of the reverse update; ``eta = 1`` is the ancestral DDPM value."""
    ab_t, ab_prev = s.abar(t), s.abar(t_prev)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)


def reverse_step(
    z_t,
    t: int,
    t_prev: int,
    d: Denoiser,
    c: ConditioningField | None,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    s: NoiseSchedule,
):
    """One step of the generalized reverse update from ``t`` to ``t_prev``.

    ``s`` is the sampling schedule; the denoiser is queried at the matching
    timestep of its own schedule.
    """
    if not t > t_prev >= 0:
        raise ValueError(f"reverse step needs t > t_prev >= 0, got {t} -> {t_prev}")
    z = _arr(z_t)
    ab_t, ab_prev = s.abar(t), s.abar(t_prev)
    eps_hat = predict_noise(d, z, s.source_timestep(t), c)
    x0_hat = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    sig = sigma(s, t, t_prev, cfg.eta)
    dir_var = 1.0 - ab_prev - sig * sig
    if dir_var < 0.0:
        # only reachable through rounding when eta = 1
        assert dir_var > -1e-12, f"invalid sigma at t={t}: {dir_var}"
        dir_var = 0.0
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(dir_var) * eps_hat
    if sig > 0.0:
        out = out + sig * rng.standard_normal(z.shape)
    return _wrap(z_t, out)


def inject_known(z_hat_t, z_0_gt, M, t: int, s: NoiseSchedule, rng: np.random.Generator):
    """Overwrite known voxels with a freshly forward-noised copy of the ground truth."""
    zh, z0 = _arr(z_hat_t), _arr(z_0_gt)
    m = _mask_arr(M)
    if zh.shape != z0.shape or m.shape != zh.shape[1:]:
        raise ValueError(f"shape mismatch: latent {zh.shape}, ground truth {z0.shape}, mask {m.shape}")
    known = _arr(forward_diffuse(z0, t, rng.standard_normal(z0.shape) if t > 0 else z0, s))
    return _wrap(z_hat_t, np.where(m[None], known, zh))


def sampling_mask(M, dilate_unknown: bool) -> np.ndarray:
    """Known-voxel mask used during sampling, optionally shrunk by dilating 1 - M."""
    m = _mask_arr(M)
    if not dilate_unknown:
        return m
    return ~dilate(MaskVolume(~m), 1).data


def repaint_inpaint(
    z_0_gt,
    M,
    d: Denoiser,
    c: ConditioningField | None,
    s: NoiseSchedule,
    cfg: SamplerConfig,
    trace: list[tuple[int, int]] | None = None,
    plan: RePaintPlan | None = None,
    rng: np.random.Generator | None = None,
    progress: Callable[[int, int], None] | None = None,
):
    """Inpaint the unknown region (M = 0) of ``z_0_gt`` by RePaint resampling.

    ``s`` must have ``cfg.T_sample`` steps. Down-transitions take a reverse
    step and composite it with the forward-noised ground truth on the known
    voxels; up-transitions re-noise the whole latent with one-step forward
    kernels. Known voxels of the result equal ``z_0_gt`` exactly.
    """
    z0 = _arr(z_0_gt)
    m = _mask_arr(M)
    if m.shape != z0.shape[1:]:
        raise ValueError(f"mask grid {m.shape} does not match latent grid {z0.shape[1:]}")
    if s.T != cfg.T_sample:
        raise ValueError(f"schedule has {s.T} steps but config asks for T_sample={cfg.T_sample}")
    plan = plan or repaint_plan(cfg.T_sample, cfg.jump_length, cfg.n_resample)
    if plan.T_sample != s.T:
        raise ValueError("plan and schedule disagree on the number of steps")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    known = sampling_mask(m, cfg.dilate_unknown)[None]
    has_known = bool(known.any())
    z = rng.standard_normal(z0.shape)
    for i, (t_from, t_to) in enumerate(plan):
        if t_to < t_from:
            z = reverse_step(z, t_from, t_to, d, c, cfg, rng, s)
            if has_known:
                noise = rng.standard_normal(z0.shape) if t_to > 0 else z0
                z = np.where(known, _arr(forward_diffuse(z0, t_to, noise, s)), z)
        else:
            z = renoise_step(z, t_from, s, rng)
        if trace is not None:
            trace.append((t_from, t_to))
        if progress is not None:
            progress(i + 1, len(plan))
    # sampling may have used a shrunken known region; the caller's known voxels are exact
    z = np.where(m[None], z0, z)
    return _wrap(z_0_gt, z)
