import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weathergeo.fusion import (
    GateParams, fuse, fuse_backward, fuse_variant, gate_backward, gate_forward, init_gate_params,
)

import oracles
from conftest import numeric_grad


def test_zero_gate_is_half():
    g = gate_forward(GateParams.zeros(8, 2), np.random.default_rng(0).normal(size=(3, 8)))
    assert np.array_equal(g, np.full((3, 8), 0.5))


def test_saturated_gate():
    p = GateParams.zeros(8, 2)
    p.b2[:] = 20.0
    g = gate_forward(p, np.ones((2, 8)))
    assert np.all(np.abs(g - 1.0) <= 1e-8)


def test_gate_matches_oracle(rng):
    p = GateParams(**{k.split(".")[1]: v for k, v in init_gate_params(4, 2, rng).items()})
    p.b1[:] = rng.normal(size=2)
    p.b2[:] = rng.normal(size=4)
    f_T = rng.normal(size=(2, 4))
    g = gate_forward(p, f_T)
    for i in range(2):
        ref = oracles.gate(p.W1, p.b1, p.W2, p.b2, f_T[i])
        assert np.allclose(g[i], ref, atol=1e-14, rtol=0)


def test_fuse_examples(rng):
    a, b = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    assert np.allclose(fuse(a, b, np.full(a.shape, 0.5)), (a + b) / 2)
    assert np.allclose(fuse(a, a, rng.random(a.shape)), a)
    assert np.allclose(fuse(a, b, np.full(a.shape, 1 - 1e-9)), a, atol=1e-6)


def test_variants(rng):
    a, b = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    assert fuse_variant("concat", a, b).shape == (3, 16)
    assert np.array_equal(fuse_variant("static", a, b),
                          fuse_variant("dynamic", a, b, GateParams.zeros(8, 4)))
    with pytest.raises(ValueError):
        fuse_variant("sum", a, b)
    with pytest.raises(ValueError):
        fuse_variant("dynamic", a, b)


def test_bad_ratio():
    with pytest.raises(ValueError):
        GateParams.zeros(10, 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_gate_open_interval_and_convexity(seed):
    r = np.random.default_rng(seed)
    D = 8
    p = GateParams(**{k.split(".")[1]: v for k, v in init_gate_params(D, 2, r).items()})
    f_I, f_T = r.normal(size=(3, D)), r.normal(size=(3, D))
    g = gate_forward(p, f_T)
    assert np.all((g > 0) & (g < 1))
    out = fuse(f_I, f_T, g)
    lo, hi = np.minimum(f_I, f_T), np.maximum(f_I, f_T)
    assert np.all((out >= lo - 1e-12) & (out <= hi + 1e-12))


def test_gate_and_fuse_gradients(rng):
    D, r = 8, 2
    p = GateParams(**{k.split(".")[1]: v for k, v in init_gate_params(D, r, rng).items()})
    p.b1[:] = rng.normal(size=D // r)
    f_I, f_T = rng.normal(size=(3, D)), rng.normal(size=(3, D))
    w = rng.normal(size=(3, D))

    def loss():
        return float(np.sum(w * fuse(f_I, f_T, gate_forward(p, f_T))))

    g, cache = gate_forward(p, f_T, return_cache=True)
    dI, dT, dg = fuse_backward(w, f_I, f_T, g)
    grads, dT_gate = gate_backward(p, cache, dg)
    dT = dT + dT_gate
    for arr, ana in ((p.W1, grads["gate.W1"]), (p.b1, grads["gate.b1"]), (p.W2, grads["gate.W2"]),
                     (p.b2, grads["gate.b2"]), (f_I, dI), (f_T, dT)):
        for idx in np.ndindex(arr.shape):
            assert abs(numeric_grad(loss, arr, idx) - ana[idx]) < 1e-7
