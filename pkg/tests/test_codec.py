from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxdiff.codec import (
    BlockMomentCodec,
    IdentityCodec,
    LatentVolume,
    block_basis,
    get_codec,
    load_latent,
    save_latent,
)
from voxdiff.volume import Volume3


def test_basis_is_orthonormal():
    b = block_basis().reshape(4, -1)
    np.testing.assert_allclose(b @ b.T, np.eye(4), atol=1e-15)


def test_constant_block_encodes_to_scaled_mean():
    z = BlockMomentCodec().encode(Volume3(np.full((4, 4, 4), 0.5)))
    np.testing.assert_allclose(z.data[:, 0, 0, 0], [4.0, 0.0, 0.0, 0.0], atol=1e-14)


def test_ramp_block_is_reproduced_exactly():
    i = np.arange(8, dtype=float)
    data = 0.1 + 0.05 * i[:, None, None] - 0.02 * i[None, None, :] + 0 * i[None, :, None]
    codec = BlockMomentCodec()
    back = codec.decode(codec.encode(Volume3(data)))
    np.testing.assert_allclose(back.data, data, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16))
def test_decode_is_projection(seed):
    rng = np.random.default_rng(seed)
    codec = BlockMomentCodec()
    x = Volume3(rng.random((8, 4, 12)))
    z = codec.encode(x)
    assert z.data.shape == (4, 2, 1, 3)
    # encoding the reconstruction gives the same coefficients (P^2 = P)
    np.testing.assert_allclose(codec.encode(codec.decode(z)).data, z.data, atol=1e-13)
    # reconstruction error is orthogonal to the basis span
    assert np.linalg.norm(codec.decode(z).data) <= np.linalg.norm(x.data) + 1e-12


def test_codec_shape_checks():
    with pytest.raises(ValueError):
        BlockMomentCodec().encode(Volume3(np.zeros((5, 4, 4))))
    with pytest.raises(ValueError):
        BlockMomentCodec().decode(LatentVolume(np.zeros((3, 1, 1, 1))))
    with pytest.raises(ValueError):
        get_codec("vae")


def test_identity_codec():
    x = Volume3(np.random.default_rng(0).random((3, 5, 2)))
    c = IdentityCodec()
    z = c.encode(x)
    assert z.channels == 1 and c.factor == 1
    np.testing.assert_array_equal(c.decode(z).data, x.data)


def test_latent_round_trip(tmp_path):
    z = LatentVolume(np.random.default_rng(3).standard_normal((4, 2, 3, 2)), (4.0, 4.0, 4.0))
    back = load_latent(save_latent(z, tmp_path))
    np.testing.assert_array_equal(back.data, z.data.astype(np.float32))
    assert back.spacing == (4.0, 4.0, 4.0)
