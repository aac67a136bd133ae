from __future__ import annotations

import numpy as np
import pytest

from voxdiff.condition import build_condition
from voxdiff.denoiser import AffineDenoiser, GaussianOracleDenoiser
from voxdiff.errors import ConfigError
from voxdiff.pipeline import (
    RunConfig,
    config_hash,
    inpaint_volume,
    load_denoiser,
    subject_seed,
    synthesize_volume,
)
from voxdiff.schedule import linear_beta_schedule
from voxdiff.volume import MaskVolume, Volume3, normalize_intensity
from test_acceptance import ball, smooth_volume

FAST = {"sampler": {"T_sample": 20, "jump_length": 4, "n_resample": 2}}
GAUSS = {"kind": "gaussian", "mean": 2.0, "variance": 1.0}


def test_run_config_round_trip_and_hash():
    cfg = RunConfig.from_dict({"seed": 3, "mode": "tumor", **FAST, "postprocess": {"order": "pb-first", "bins": None}})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg and config_hash(again) == config_hash(cfg)
    assert cfg.sampler.seed == 3
    assert config_hash(RunConfig.from_dict({"seed": 4})) != config_hash(RunConfig.from_dict({"seed": 3}))


@pytest.mark.parametrize(
    "d",
    [{"mode": "sick"}, {"codec": "vae"}, {"sampler": {"bogus": 1}}, {"sampler": {"eta": 3}},
     {"postprocess": {"order": "x"}}, {"schedule": {"T": 0}}, {"sampler": {"T_sample": 2000}},
     {"sampler": {"T_sample": 5, "jump_length": 10}}],
)
def test_run_config_errors(d):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)


def test_subject_seeds_are_stable_and_distinct():
    assert subject_seed(0, "a") == subject_seed(0, "a")
    assert len({subject_seed(0, s) for s in "abcdef"}) == 6
    assert subject_seed(1, "a") != subject_seed(0, "a")


def test_load_denoiser_variants(tmp_path):
    base = linear_beta_schedule()
    d = load_denoiser(GAUSS, base, (4, 2, 2, 2))
    assert isinstance(d, GaussianOracleDenoiser)
    model = AffineDenoiser(base, (4, 2, 2, 2))
    model.save(tmp_path / "a.json")
    assert isinstance(load_denoiser(tmp_path / "a.json", base, (4, 2, 2, 2)), AffineDenoiser)
    with pytest.raises(ConfigError):
        load_denoiser(tmp_path / "a.json", base, (4, 3, 3, 3))
    with pytest.raises(ConfigError):
        load_denoiser(tmp_path / "a.json", linear_beta_schedule(1000, 2e-4, 0.02), (4, 2, 2, 2))
    with pytest.raises(ConfigError):
        load_denoiser({"kind": "gaussian", "mean": [1.0, 2.0, 3.0]}, base, (4, 2, 2, 2))
    with pytest.raises(ConfigError):
        load_denoiser({"kind": "unet"}, base, (4, 2, 2, 2))
    with pytest.raises(FileNotFoundError):
        load_denoiser(tmp_path / "none.json", base, (4, 2, 2, 2))


@pytest.mark.parametrize("codec", ["block-moment", "identity"])
def test_inpaint_non_multiple_shape(codec):
    rng = np.random.default_rng(0)
    shape = (13, 10, 11)
    img = Volume3(smooth_volume(shape, rng) * 300, (1.0, 1.2, 1.5))
    unknown = MaskVolume(ball(shape, (6, 5, 5), 3))
    cfg = RunConfig.from_dict({"codec": codec, **FAST})
    den = {"kind": "gaussian", "mean": 0.5, "variance": 0.1} if codec == "identity" else GAUSS
    res = inpaint_volume(img, unknown, den, cfg)
    gt = normalize_intensity(img).data
    assert res.volume.shape == shape and res.volume.spacing == img.spacing
    assert np.array_equal(res.volume.data[~unknown.data], gt[~unknown.data])
    assert res.volume.data.min() >= 0 and res.volume.data.max() <= 1
    assert res.plan_length == len(res.transitions)


def test_inpaint_with_conditioning_and_modes():
    rng = np.random.default_rng(1)
    shape = (16, 16, 16)
    img = Volume3(smooth_volume(shape, rng))
    unknown = MaskVolume(ball(shape, (8, 8, 8), 4))
    tissue = Volume3(rng.integers(0, 4, shape).astype(float))
    conc = Volume3(rng.random(shape))
    base = linear_beta_schedule()
    model = AffineDenoiser(base, (4, 4, 4, 4), weight_c=[0.0, 0.0, 0.0, 3.0])
    spec = model.to_json()
    healthy = inpaint_volume(img, unknown, spec, RunConfig.from_dict({"mode": "healthy", **FAST}), tissue=tissue, concentration=conc)
    tumor = inpaint_volume(img, unknown, spec, RunConfig.from_dict({"mode": "tumor", **FAST}), tissue=tissue, concentration=conc)
    # zeroing the concentration removes its influence: the tumor run differs
    assert not np.array_equal(healthy.latent.data, tumor.latent.data)
    cond = build_condition(tissue, None)
    zero = inpaint_volume(img, unknown, spec, RunConfig.from_dict({"mode": "tumor", **FAST}), condition=cond)
    np.testing.assert_array_equal(zero.latent.data, healthy.latent.data)
    with pytest.raises(ConfigError):
        inpaint_volume(img, unknown, spec, RunConfig.from_dict(FAST), condition=build_condition(Volume3(np.zeros((8, 8, 8))), None))


def test_inpaint_shape_mismatch():
    with pytest.raises(ValueError):
        inpaint_volume(Volume3(np.zeros((4, 4, 4))), MaskVolume(np.zeros((4, 4, 8), bool)), GAUSS, RunConfig())


def test_synthesize_volume_is_seeded():
    cfg = RunConfig.from_dict(FAST)
    a, z, n = synthesize_volume((9, 8, 8), GAUSS, cfg, seed=1)
    b, _, _ = synthesize_volume((9, 8, 8), GAUSS, cfg, seed=1)
    c, _, _ = synthesize_volume((9, 8, 8), GAUSS, cfg, seed=2)
    assert a.shape == (9, 8, 8) and z.data.shape == (4, 3, 2, 2)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert n == 20 + 2 * 4 * 4
