import numpy as np
import pytest

from weathergeo.encoders import EncoderConfig
from weathergeo.model import Batch, ModelConfig, init_params

WORDS = "fog rain snow dark clear red blue building road pond field north south east west".split()


def numeric_grad(f, x, idx, eps=1e-6):
    """Central difference of scalar ``f()`` w.r.t. ``x[idx]``, perturbing in place."""
    old = x[idx]
    x[idx] = old + eps
    fp = f()
    x[idx] = old - eps
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * eps)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_tensor(f, x, analytic, rng, samples=12):
    """Relative error between analytic and numeric gradients on sampled entries."""
    flat = [tuple(int(rng.integers(s)) for s in x.shape) for _ in range(samples)] if x.size > samples \
        else list(np.ndindex(x.shape))
    num = [numeric_grad(f, x, i) for i in flat]
    ana = [analytic[i] for i in flat]
    return rel_err(ana, num)


def small_model_config(fusion_mode="dynamic", text_mode=6, D=16, r=4, C=5, d=8):
    enc = EncoderConfig(image_size=16, patch_size=4, hidden_dim=8, embed_dim=D,
                        vocab_size=64, token_dim=8, joint_dim=d)
    return ModelConfig(enc, num_classes=C, fusion_mode=fusion_mode, reduction_ratio=r,
                       text_mode=text_mode, tau_init=0.3)


def random_batch(rng, B=4, size=16, C=5):
    def txt():
        return " ".join(rng.choice(WORDS, 5))

    boxes = np.tile(np.array([0.5, 0.5, 0.3, 0.2]), (B, 3, 1)) + rng.uniform(-0.1, 0.1, (B, 3, 4))
    return Batch(rng.random((B, size, size, 3)), rng.random((B, size, size, 3)),
                 np.arange(B) % C,
                 [txt() for _ in range(B)], [txt() for _ in range(B)],
                 [[txt() for _ in range(3)] for _ in range(B)], boxes)


def jittered_params(cfg, rng):
    """Init params with non-zero biases so every bias gradient is exercised."""
    p = init_params(cfg, rng)
    for k in p:
        if k.endswith(("b1", "b2", ".b")):
            p[k] = rng.normal(0.0, 0.3, p[k].shape)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
