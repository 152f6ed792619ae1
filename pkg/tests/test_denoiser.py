from __future__ import annotations

import numpy as np
import pytest

from genmove import autodiff as ad
from genmove.autodiff import Var
from genmove.denoiser import (
    DenoiserConfig,
    DenoiserModel,
    parameter_gradients,
    step_embedding,
)

MINI = DenoiserConfig(
    embed_dim=4, d_model=8, layers=1, heads=2, conv_channels=4, context_dim=4, seed=0
)


def test_step_embedding_zero():
    emb = step_embedding(0)
    assert emb.shape == (128,)
    assert np.array_equal(emb[:64], np.zeros(64))
    assert np.array_equal(emb[64:], np.ones(64))


def test_step_embedding_formula():
    emb = step_embedding(1)
    assert emb[63] == pytest.approx(np.sin(10.0**4))
    assert emb[64] == pytest.approx(np.cos(1.0))
    t = 17
    emb = step_embedding(t)
    for j in (0, 5, 31, 63):
        freq = 10.0 ** (4.0 * j / 63.0)
        assert emb[j] == pytest.approx(np.sin(t * freq))
        assert emb[64 + j] == pytest.approx(np.cos(t * freq))


def test_step_embedding_rejects_negative():
    with pytest.raises(ValueError):
        step_embedding(-1)


def test_predict_noise_shape_and_determinism(rng):
    model = DenoiserModel(MINI)
    e_ta = rng.standard_normal((6, 4))
    e_co = rng.standard_normal((6, 4))
    bits = np.array([1, 0, 1, 1, 0, 0])
    p_u = rng.standard_normal(4)
    out1 = model.predict_noise(e_ta, e_co, bits, 3, p_u)
    out2 = model.predict_noise(e_ta, e_co, bits, 3, p_u)
    assert out1.shape == (6, 4)
    assert np.array_equal(out1, out2)
    assert np.isfinite(out1).all()


def test_same_seed_same_model(rng):
    a = DenoiserModel(MINI)
    b = DenoiserModel(MINI)
    assert np.array_equal(a.params.flat(), b.params.flat())
    inputs = rng.standard_normal((5, 4))
    assert np.array_equal(
        a.predict_noise(inputs, inputs, np.ones(5), 1, np.zeros(4)),
        b.predict_noise(inputs, inputs, np.ones(5), 1, np.zeros(4)),
    )


def test_permutation_equivariance_without_positions(rng):
    model = DenoiserModel(MINI)
    L = 7
    e_ta = rng.standard_normal((L, 4))
    e_co = rng.standard_normal((L, 4))
    bits = rng.integers(0, 2, L)
    p_u = rng.standard_normal(4)
    base = model.predict_noise(e_ta, e_co, bits, 5, p_u, positional=False)
    perm = rng.permutation(L)
    permuted = model.predict_noise(e_ta[perm], e_co[perm], bits[perm], 5, p_u, positional=False)
    unpermuted = np.empty_like(permuted)
    unpermuted[perm] = permuted
    np.testing.assert_allclose(unpermuted, base, atol=1e-10)


def test_positions_break_equivariance(rng):
    model = DenoiserModel(MINI)
    L = 7
    e_ta = rng.standard_normal((L, 4))
    bits = np.ones(L, dtype=int)
    p_u = np.zeros(4)
    base = model.predict_noise(e_ta, e_ta, bits, 5, p_u)
    perm = np.roll(np.arange(L), 1)
    permuted = model.predict_noise(e_ta[perm], e_ta[perm], bits[perm], 5, p_u)
    unpermuted = np.empty_like(permuted)
    unpermuted[perm] = permuted
    assert not np.allclose(unpermuted, base, atol=1e-6)


def test_context_changes_output(rng):
    model = DenoiserModel(MINI)
    e_ta = rng.standard_normal((5, 4))
    bits = np.zeros(5, dtype=int)
    with_ctx = model.predict_noise(e_ta, np.zeros_like(e_ta), bits, 2, rng.standard_normal(4))
    without = model.predict_noise(e_ta, np.zeros_like(e_ta), bits, 2, None)
    assert not np.allclose(with_ctx, without)


def test_shape_contract_violations(rng):
    model = DenoiserModel(MINI)
    good = rng.standard_normal((5, 4))
    with pytest.raises(ValueError):
        model.predict_noise(rng.standard_normal((5, 3)), good, np.ones(5), 1, None)
    with pytest.raises(ValueError):
        model.predict_noise(good, good, np.ones(4), 1, None)
    with pytest.raises(ValueError):
        model.predict_noise(good, rng.standard_normal((4, 4)), np.ones(5), 1, None)


def _mini_loss_closure(model, rng):
    B, L, D = 3, 5, 4
    e_ta = rng.standard_normal((B, L, D))
    e_co = rng.standard_normal((B, L, D))
    bits = rng.integers(0, 2, (B, L)).astype(float)
    ts = rng.integers(1, 20, B)
    p_u = rng.standard_normal((B, 4))
    eps = rng.standard_normal((B, L, D))

    def closure():
        out = model.forward_vars(e_ta, e_co, bits, ts, p_u)
        return ad.vmean(ad.square(out - Var(eps)))

    return closure


def test_parameter_count_miniature():
    model = DenoiserModel(MINI)
    assert model.n_params <= 2000


def test_gradients_match_finite_differences(rng):
    """Central finite differences (h=1e-3) on 50 random coordinates."""
    model = DenoiserModel(MINI)
    closure = _mini_loss_closure(model, rng)
    grad = parameter_gradients(model, closure)
    assert grad.shape == (model.n_params,)

    h = 1e-3
    coords = np.random.default_rng(99).choice(model.n_params, size=50, replace=False)
    theta = model.params.flat()
    worst = 0.0
    for c in coords:
        step = np.zeros_like(theta)
        step[c] = h
        model.params.set_flat(theta + step)
        hi = closure().item()
        model.params.set_flat(theta - step)
        lo = closure().item()
        model.params.set_flat(theta)
        fd = (hi - lo) / (2 * h)
        rel = abs(grad[c] - fd) / max(abs(grad[c]) + abs(fd), 1e-3)
        worst = max(worst, rel)
    assert worst < 1e-3


def test_zero_loss_zero_gradient(rng):
    model = DenoiserModel(MINI)
    e_ta = rng.standard_normal((2, 5, 4))

    def closure():
        out = model.forward_vars(e_ta, e_ta, np.ones((2, 5)), np.array([1, 2]), np.zeros((2, 4)))
        return ad.vsum(ad.square(out - out))

    grad = parameter_gradients(model, closure)
    assert np.array_equal(grad, np.zeros_like(grad))


def test_linear_probe_matches_least_squares_gradient(rng):
    """Hand-derived gradient of a plain least-squares probe through the tape."""
    from genmove.autodiff import ParamStore

    class Probe:
        def __init__(self):
            self.params = ParamStore()
            self.w = self.params.param("w", rng.standard_normal((3, 2)))

    probe = Probe()
    x = rng.standard_normal((10, 3))
    y = rng.standard_normal((10, 2))

    def closure():
        return ad.vsum(ad.square(Var(x) @ probe.w - Var(y)))

    grad = parameter_gradients(probe, closure).reshape(3, 2)
    expected = 2 * x.T @ (x @ probe.w.data - y)
    np.testing.assert_allclose(grad, expected, atol=1e-10)


def test_gradient_error_on_nonfinite(rng):
    model = DenoiserModel(MINI)

    def closure():
        return ad.vsum(Var(np.array([[np.inf]])))

    with pytest.raises(FloatingPointError):
        parameter_gradients(model, closure)


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiserConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        DenoiserConfig(layers=0)
