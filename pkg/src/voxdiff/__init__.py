"""Latent diffusion inpainting of 3D volumes with RePaint resampling.

The package is organised by stage: ``volume`` (I/O and preprocessing),
``schedule`` (noise schedules and resampling plans), ``condition``
(anatomical conditioning), ``codec`` (image <-> latent transform),
``denoiser`` (noise predictors), ``sampler`` (reverse diffusion),
``postprocess`` (harmonization) and ``evalkit`` (metrics and masks).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .codec import BlockMomentCodec, IdentityCodec, LatentVolume, get_codec
from .condition import ConditioningField, build_condition, zero_tumor
from .denoiser import AffineDenoiser, GaussianOracleDenoiser, GaussianPrior, train_affine_denoiser
from .errors import ConfigError, NumericError, PlacementError, SolverError, VolumeFormatError, VoxdiffError
from .evalkit import MaskSpec, aggregate_report, generate_masks, masked_metrics
from .postprocess import BlendConfig, PostprocessConfig, harmonize, histogram_match, poisson_blend
from .sampler import SamplerConfig, forward_diffuse, repaint_inpaint, reverse_step
from .schedule import NoiseSchedule, RePaintPlan, linear_beta_schedule, repaint_plan, subsample_schedule
from .volume import MaskVolume, Volume3, read_mask, read_volume, write_mask, write_volume

__all__ = [
    "AffineDenoiser", "BlendConfig", "BlockMomentCodec", "ConditioningField", "ConfigError",
    "GaussianOracleDenoiser", "GaussianPrior", "IdentityCodec", "LatentVolume", "MaskSpec",
    "MaskVolume", "NoiseSchedule", "NumericError", "PlacementError", "PostprocessConfig",
    "RePaintPlan", "SamplerConfig", "SolverError", "Volume3", "VolumeFormatError", "VoxdiffError",
    "aggregate_report", "build_condition", "forward_diffuse", "generate_masks", "get_codec",
    "harmonize", "histogram_match", "linear_beta_schedule", "masked_metrics", "poisson_blend",
    "read_mask", "read_volume", "repaint_inpaint", "repaint_plan", "reverse_step",
    "subsample_schedule", "train_affine_denoiser", "write_mask", "write_volume", "zero_tumor",
]
