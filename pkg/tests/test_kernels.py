from __future__ import annotations

import importlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxdiff import kernels
from voxdiff.kernels import _pykernels
from voxdiff.volume import MaskVolume, Volume3, write_mask, write_volume

try:
    from voxdiff.kernels import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def naive_box_sum(a, r):
    out = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        sl = tuple(slice(max(i - r, 0), i + r + 1) for i in idx)
        out[idx] = a[sl].sum()
    return out


@pytest.mark.parametrize("backend", [_pykernels, pytest.param(_ckernels, marks=needs_ext)])
@pytest.mark.parametrize("r", [0, 1, 2, 5])
def test_box_sum_matches_naive(backend, r):
    a = np.random.default_rng(r).random((6, 7, 5))
    np.testing.assert_allclose(backend.box_sum3d(a, r), naive_box_sum(a, r), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", [_pykernels, pytest.param(_ckernels, marks=needs_ext)])
def test_laplacian_matvec_small(backend):
    # chain of three unknowns: 0 - 1 - 2, other neighbours outside (index 3)
    nbr = np.full((6, 3), 3, dtype=np.int64)
    nbr[1, 0], nbr[0, 1], nbr[1, 1], nbr[0, 2] = 1, 0, 2, 1
    x = np.array([1.0, 2.0, 4.0])
    np.testing.assert_array_equal(backend.laplacian_matvec(x, nbr), [6 - 2, 12 - 1 - 4, 24 - 2])


@needs_ext
@settings(max_examples=30, deadline=None)
@given(
    shape=st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)),
    r=st.integers(0, 7),
    seed=st.integers(0, 2**16),
)
def test_backends_bitwise_equal_box_sum(shape, r, seed):
    a = np.random.default_rng(seed).standard_normal(shape)
    np.testing.assert_array_equal(_ckernels.box_sum3d(a, r), _pykernels.box_sum3d(a, r))


@needs_ext
def test_backends_bitwise_equal_laplacian():
    rng = np.random.default_rng(0)
    n = 500
    nbr = rng.integers(0, n + 1, size=(6, n)).astype(np.int64)
    x = rng.standard_normal(n)
    np.testing.assert_array_equal(_ckernels.laplacian_matvec(x, nbr), _pykernels.laplacian_matvec(x, nbr))


def test_pure_python_switch(monkeypatch):
    monkeypatch.setenv("VOXDIFF_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("VOXDIFF_PURE_PYTHON")
        importlib.reload(kernels)


def test_box_sum_rejects_negative_radius():
    with pytest.raises(ValueError):
        kernels.box_sum3d(np.zeros((2, 2, 2)), -1)


@needs_ext
def test_cli_output_identical_across_backends(tmp_path):
    shape = (16, 16, 16)
    rng = np.random.default_rng(3)
    g = np.indices(shape)
    img = 0.3 + 0.02 * g[0] + 0.05 * rng.random(shape)
    region = ((g - 7.5) ** 2).sum(axis=0) <= 16
    write_volume(Volume3(img), tmp_path / "img.nii")
    write_mask(MaskVolume(region), tmp_path / "mask.nii")
    (tmp_path / "den.json").write_text('{"kind": "gaussian", "mean": 2.0, "variance": 1.0}')
    outputs = {}
    for flag in ("0", "1"):
        env = {**os.environ, "VOXDIFF_PURE_PYTHON": flag}
        out = tmp_path / f"out{flag}.nii"
        subprocess.run(
            [sys.executable, "-m", "voxdiff", "inpaint", "--image", str(tmp_path / "img.nii"),
             "--mask", str(tmp_path / "mask.nii"), "--denoiser", str(tmp_path / "den.json"),
             "--out", str(out), "--T-sample", "20", "--jump-length", "4", "--n-resample", "2"],
            check=True, env=env,
        )
        outputs[flag] = out.read_bytes()
        backend = json.loads((tmp_path / f"out{flag}.nii.manifest.json").read_text())["kernel_backend"]
        assert backend == ("python" if flag == "1" else "cython")
    assert outputs["0"] == outputs["1"]
