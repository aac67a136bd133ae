"""End-to-end inpainting: image -> latent -> RePaint -> image -> harmonization."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import LatentVolume, get_codec
from .condition import ConditioningField, build_condition, zero_tumor
from .denoiser import AffineDenoiser, GaussianOracleDenoiser, GaussianPrior
from .errors import ConfigError, NumericError
from .postprocess import BlendConfig, PostprocessConfig, composite, harmonize
from .sampler import SamplerConfig, repaint_inpaint
from .schedule import NoiseSchedule, linear_beta_schedule, repaint_plan, subsample_schedule
from .volume import (
    MaskVolume,
    Volume3,
    block_all,
    crop_to,
    normalize_intensity,
    pad_mask_to,
    pad_to,
    padded_shape,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("schedule T must be at least 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")

    def build(self) -> NoiseSchedule:
        return linear_beta_schedule(self.T, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings shared by the pipeline subcommands."""

    seed: int = 0
    codec: str = "block-moment"
    mode: str = "healthy"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    apply_postprocess: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("healthy", "tumor"):
            raise ConfigError(f"mode must be 'healthy' or 'tumor', got {self.mode!r}")
        if self.codec not in ("block-moment", "identity"):
            raise ConfigError(f"unknown codec {self.codec!r}")
        if self.sampler.T_sample > self.schedule.T:
            raise ConfigError(f"T_sample={self.sampler.T_sample} exceeds schedule T={self.schedule.T}")
        if self.sampler.jump_length > self.sampler.T_sample:
            raise ConfigError("jump_length cannot exceed T_sample")

    def to_dict(self) -> dict:
        pp = self.postprocess
        return {
            "seed": self.seed,
            "codec": self.codec,
            "mode": self.mode,
            "schedule": vars(self.schedule).copy(),
            "sampler": self.sampler.to_dict(),
            "postprocess": {
                "enabled": self.apply_postprocess,
                "blend": pp.blend,
                "match": pp.match,
                "order": pp.order,
                "black_threshold": pp.black_threshold,
                "bins": pp.bins,
                "cg_tolerance": pp.blend_cfg.cg_tolerance,
                "cg_max_iters": pp.blend_cfg.cg_max_iters,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        try:
            sched = ScheduleConfig(**d.get("schedule", {}))
            sampler = SamplerConfig(**{"seed": d.get("seed", 0), **d.get("sampler", {})})
            pp = dict(d.get("postprocess", {}))
            enabled = pp.pop("enabled", True)
            blend_cfg = BlendConfig(
                pp.pop("cg_tolerance", 1e-6), pp.pop("cg_max_iters", None) or None
            )
            post = PostprocessConfig(blend_cfg=blend_cfg, **pp)
            return cls(
                seed=int(d.get("seed", 0)),
                codec=d.get("codec", "block-moment"),
                mode=d.get("mode", "healthy"),
                schedule=sched,
                sampler=sampler,
                postprocess=post,
                apply_postprocess=bool(enabled),
            )
        except TypeError as exc:
            raise ConfigError(f"unknown or malformed config key: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def subject_seed(seed: int, subject: str) -> int:
    """Independent per-subject stream derived from the global seed and subject id."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(subject.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def load_denoiser(spec: dict | str | Path, schedule: NoiseSchedule, latent_shape: tuple[int, ...]):
    """Build a denoiser from a JSON parameter file or an already parsed dict.

    ``{"kind": "gaussian", "mean": .., "variance": ..}`` gives the oracle for a
    Gaussian latent prior (scalars or nested lists broadcastable to the latent);
    ``{"kind": "affine", ...}`` loads trained parameters.
    """
    if not isinstance(spec, dict):
        path = Path(spec)
        if not path.exists():
            raise FileNotFoundError(f"denoiser file not found: {path}")
        spec = json.loads(path.read_text())
    kind = spec.get("kind")
    if kind == "gaussian":
        try:
            mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=np.float64), latent_shape)
            var = np.broadcast_to(np.asarray(spec.get("variance", 1.0), dtype=np.float64), latent_shape)
        except ValueError as exc:
            raise ConfigError(f"Gaussian prior does not broadcast to latent {latent_shape}") from exc
        return GaussianOracleDenoiser(GaussianPrior(mean, var), schedule)
    if kind == "affine":
        model = AffineDenoiser.from_json(spec)
        if model.latent_shape != tuple(latent_shape):
            raise ConfigError(f"affine denoiser trained for latent {model.latent_shape}, got {latent_shape}")
        if not np.allclose(model.schedule.beta, schedule.beta, rtol=0, atol=1e-15):
            raise ConfigError("affine denoiser was trained with a different noise schedule")
        return model
    raise ConfigError(f"unknown denoiser kind {kind!r}")


@dataclass
class InpaintResult:
    volume: Volume3
    latent: LatentVolume
    plan_length: int
    transitions: list[tuple[int, int]]
    raw: Volume3  # decoded and composited, before harmonization


def prepare_condition(
    cond: ConditioningField | None,
    tissue: Volume3 | None,
    concentration: Volume3 | None,
    padded: tuple[int, int, int],
    factor: int,
    mode: str,
) -> ConditioningField | None:
    if cond is None and tissue is not None:
        conc = pad_to(concentration, padded) if concentration is not None else None
        cond = build_condition(pad_to(tissue, padded), conc, factor)
    if cond is not None and mode == "healthy":
        cond = zero_tumor(cond)
    return cond


def inpaint_volume(
    image: Volume3,
    unknown: MaskVolume,
    denoiser_spec,
    cfg: RunConfig,
    condition: ConditioningField | None = None,
    tissue: Volume3 | None = None,
    concentration: Volume3 | None = None,
    seed: int | None = None,
) -> InpaintResult:
    """Inpaint voxels where ``unknown`` is set.

    The image is normalized, zero-padded to a multiple of the codec factor,
    encoded, sampled with RePaint, decoded, cropped back and harmonized.
    """
    if image.shape != unknown.shape:
        raise ValueError(f"image {image.shape} and mask {unknown.shape} differ in shape")
    codec = get_codec(cfg.codec)
    factor = codec.factor
    norm = normalize_intensity(image)
    shape = padded_shape(image.shape, factor)
    padded = pad_to(norm, shape)
    known_full = pad_mask_to(unknown.invert(), shape, fill=True)
    z0 = codec.encode(padded)
    known_latent = block_all(known_full, factor)
    cond = prepare_condition(condition, tissue, concentration, shape, factor, cfg.mode)
    if cond is not None and cond.latent_shape != z0.shape:
        raise ConfigError(f"conditioning grid {cond.latent_shape} != latent grid {z0.shape}")

    base = cfg.schedule.build()
    sched = subsample_schedule(base, cfg.sampler.T_sample)
    d = load_denoiser(denoiser_spec, base, z0.data.shape)
    scfg = cfg.sampler if seed is None else SamplerConfig(**{**cfg.sampler.to_dict(), "seed": seed})
    plan = repaint_plan(scfg.T_sample, scfg.jump_length, scfg.n_resample)
    trace: list[tuple[int, int]] = []
    z = repaint_inpaint(z0, known_latent, d, cond, sched, scfg, trace=trace, plan=plan)
    if not np.all(np.isfinite(z.data)):
        raise NumericError("sampling produced non-finite latents")
    if trace != list(plan.transitions):
        raise RuntimeError("executed transitions diverged from the plan")

    decoded = crop_to(codec.decode(z), image.shape)
    generated = Volume3(np.clip(decoded.data, 0.0, 1.0), image.spacing)
    raw = composite(generated, norm, unknown)
    if cfg.apply_postprocess and (cfg.postprocess.blend or cfg.postprocess.match):
        blend_region = MaskVolume(_interior(unknown.data), unknown.spacing)
        # reference intensities come from known voxels only
        context = norm.with_data(np.where(unknown.data, 0.0, norm.data))
        out = harmonize(generated, context, blend_region, cfg.postprocess) if blend_region.data.any() else raw
        # voxels on the outer faces cannot be blended; keep the composite there
        out = composite(Volume3(np.clip(out.data, 0.0, 1.0)), raw, blend_region)
    else:
        out = raw
    out = Volume3(out.data, image.spacing, (0.0, 1.0))
    return InpaintResult(out, z, len(plan), trace, raw)


def _interior(mask: np.ndarray) -> np.ndarray:
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1, 1:-1] = mask[1:-1, 1:-1, 1:-1]
    return inner


def synthesize_volume(
    shape: tuple[int, int, int],
    denoiser_spec,
    cfg: RunConfig,
    condition: ConditioningField | None = None,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    seed: int | None = None,
) -> tuple[Volume3, LatentVolume, int]:
    """Generate a full volume (no known voxels) under the given conditioning."""
    codec = get_codec(cfg.codec)
    padded = padded_shape(shape, codec.factor)
    lshape = tuple(s // codec.factor for s in padded)
    channels = 4 if codec.factor == 4 else 1
    base = cfg.schedule.build()
    sched = subsample_schedule(base, cfg.sampler.T_sample)
    d = load_denoiser(denoiser_spec, base, (channels, *lshape))
    if condition is not None:
        if cfg.mode == "healthy":
            condition = zero_tumor(condition)
        if condition.latent_shape != lshape:
            raise ConfigError(f"conditioning grid {condition.latent_shape} != latent grid {lshape}")
    scfg = cfg.sampler if seed is None else SamplerConfig(**{**cfg.sampler.to_dict(), "seed": seed})
    z0 = LatentVolume(np.zeros((channels, *lshape)), tuple(s * codec.factor for s in spacing))
    known = np.zeros(lshape, dtype=bool)
    z = repaint_inpaint(z0, known, d, condition, sched, scfg)
    vol = crop_to(codec.decode(z), shape)
    return Volume3(vol.data, spacing), z, len(repaint_plan(scfg.T_sample, scfg.jump_length, scfg.n_resample))


__all__ = [
    "InpaintResult",
    "RunConfig",
    "ScheduleConfig",
    "config_hash",
    "inpaint_volume",
    "load_denoiser",
    "subject_seed",
    "synthesize_volume",
]
