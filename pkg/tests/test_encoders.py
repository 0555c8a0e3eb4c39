import numpy as np
import pytest

from weathergeo.encoders import (
    EncoderConfig, encode_image, encode_joint, encode_text, init_encoder_params,
)


@pytest.fixture
def setup(rng):
    cfg = EncoderConfig(image_size=16, patch_size=4, hidden_dim=8, embed_dim=12,
                        vocab_size=128, token_dim=8, joint_dim=6)
    return cfg, init_encoder_params(cfg, rng)


def test_image_rows_unit_and_deterministic(setup, rng):
    cfg, p = setup
    img = rng.random((16, 16, 3))
    out = encode_image(p, [img, img, rng.random((16, 16, 3))], cfg.patch_size)
    assert out.shape == (3, cfg.embed_dim)
    assert np.array_equal(out[0], out[1])
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)


def test_image_patch_perturbation(setup, rng):
    cfg, p = setup
    img = rng.random((16, 16, 3))
    other = img.copy()
    other[:4, :4] = 1.0 - other[:4, :4]
    a, b = encode_image(p, [img, other], cfg.patch_size)
    assert not np.allclose(a, b)


def test_image_shape_mismatch(setup):
    cfg, p = setup
    with pytest.raises(ValueError):
        encode_image(p, [np.zeros((8, 8, 3))], cfg.patch_size)


def test_text_rows(setup):
    _, p = setup
    a = encode_text(p, ["dense fog", "dense fog", "clear sky"])
    assert np.array_equal(a[0], a[1])
    assert float(a[0] @ a[2]) < 1.0
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-6)


def test_text_equivariance(setup):
    _, p = setup
    ab = encode_text(p, ["rain over the road", "snow on the field"])
    ba = encode_text(p, ["snow on the field", "rain over the road"])
    assert np.array_equal(ab, ba[::-1])


def test_empty_text_rejected(setup):
    _, p = setup
    with pytest.raises(ValueError):
        encode_text(p, ["..."])


def test_joint(setup, rng):
    cfg, p = setup
    img = rng.random((16, 16, 3))
    x = encode_joint(p, img, "red building north", cfg.patch_size)
    assert x.shape == (cfg.d,)
    assert np.array_equal(x, encode_joint(p, img, "red building north", cfg.patch_size))
    y = encode_joint(p, img, "blue pond south", cfg.patch_size)
    assert not np.allclose(x, y)
