from __future__ import annotations

import numpy as np
import pytest

from genmove.diffusion import (
    DiffusionState,
    GuidanceConfig,
    NoiseSchedule,
    ScheduleError,
    guided_noise,
    make_schedule,
    p_sample_step,
    q_sample,
    sample,
    sample_batch,
    training_loss,
    training_loss_graph,
)
from genmove.masks import Mask


def test_schedule_single_step():
    s = make_schedule(1, 0.1, 0.1)
    assert s.alpha_bar.tolist() == [0.9]
    assert s.sigma.tolist() == [pytest.approx(np.sqrt(0.1))]


def test_schedule_standard_1000_terminal_alpha_bar():
    s = make_schedule(1000, 1e-4, 0.02)
    # independent oracle: plain python cumulative product
    prod = 1.0
    for i in range(1000):
        beta = 1e-4 + (0.02 - 1e-4) * i / 999
        prod *= 1.0 - beta
    assert abs(s.alpha_bar[-1] - prod) / prod < 1e-6
    assert abs(prod - 4.0e-5) / 4.0e-5 < 0.02


def test_schedule_invariants():
    for T, lo, hi in ((1000, 1e-4, 0.02), (50, 2e-3, 0.4), (7, 0.01, 0.3)):
        s = make_schedule(T, lo, hi)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.beta[:-1] <= s.beta[1:])
        assert np.all(s.sigma <= np.sqrt(s.beta) + 1e-15)
        assert np.all((0 < s.beta) & (s.beta < 1))


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ScheduleError):
        make_schedule(0, 1e-4, 0.02)
    with pytest.raises(ScheduleError):
        make_schedule(10, 0.2, 0.1)
    with pytest.raises(ScheduleError):
        make_schedule(10, 0.0, 0.1)
    with pytest.raises(ScheduleError):
        make_schedule(10, 1e-4, 0.02, kind="cosine")


def test_q_sample_noiseless(rng):
    s = make_schedule(20, 1e-3, 0.2)
    e0 = rng.standard_normal((4, 3))
    got = q_sample(e0, 7, np.zeros_like(e0), s)
    np.testing.assert_allclose(got, np.sqrt(s.alpha_bar_t(7)) * e0)


def test_q_sample_pure_noise_at_T(rng):
    s = make_schedule(20, 1e-3, 0.2)
    eps = rng.standard_normal((4, 3))
    got = q_sample(np.zeros((4, 3)), 20, eps, s)
    np.testing.assert_allclose(got, np.sqrt(1 - s.alpha_bar_t(20)) * eps)


def test_q_sample_monte_carlo_moments():
    s = make_schedule(50, 2e-3, 0.4)
    rng = np.random.default_rng(7)
    e0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    t = 23
    n = 10_000
    draws = np.stack([q_sample(e0, t, rng.standard_normal(e0.shape), s) for _ in range(n)])
    ab = s.alpha_bar_t(t)
    std = np.sqrt(1 - ab)
    se_mean = std / np.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - np.sqrt(ab) * e0) < 3 * se_mean)
    se_std = std / np.sqrt(2 * (n - 1))
    assert np.all(np.abs(draws.std(axis=0, ddof=1) - std) < 3 * se_std)


def test_q_sample_rejects_bad_t(rng):
    s = make_schedule(5, 1e-3, 0.2)
    with pytest.raises(ValueError):
        q_sample(np.zeros((2, 2)), 0, np.zeros((2, 2)), s)
    with pytest.raises(ValueError):
        q_sample(np.zeros((2, 2)), 6, np.zeros((2, 2)), s)


def _batch(rng, n=4, L=6, D=3, C=2):
    items = []
    for _ in range(n):
        bits = rng.integers(0, 2, L)
        if bits.all():
            bits[0] = 0
        e_all = rng.standard_normal((L, D))
        e_ta0 = e_all * (1 - bits)[:, None]
        e_co = e_all * bits[:, None]
        items.append((e_ta0, e_co, Mask(bits=bits), rng.standard_normal(C)))
    return items


def test_training_loss_zero_for_noise_oracle(rng):
    s = make_schedule(10, 1e-3, 0.2)
    batch = _batch(rng)
    originals = [item[0] for item in batch]
    calls = {"i": 0}

    def oracle(e_t, e_co, bits, t, p_u):
        e0 = originals[calls["i"]]
        calls["i"] += 1
        ab = s.alpha_bar_t(t)
        return (e_t - np.sqrt(ab) * e0) / np.sqrt(1 - ab)

    loss = training_loss(batch, oracle, s, GuidanceConfig(1.0, 0.0), np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-20)


def test_training_loss_of_zero_model_is_unit(rng):
    s = make_schedule(10, 1e-3, 0.2)
    batch = _batch(rng, n=64, L=24, D=8)
    model = lambda e_t, e_co, bits, t, p_u: np.zeros_like(e_t)
    loss = training_loss(batch, model, s, GuidanceConfig(1.0, 0.0), np.random.default_rng(1))
    # E||eps||^2 per target entry is 1; 3 standard errors over all entries
    n_entries = sum((1 - item[2].bits).sum() * 8 for item in batch)
    assert abs(loss - 1.0) < 3 * np.sqrt(2.0 / n_entries)


def test_training_loss_lambda_one_blocks_context(rng):
    s = make_schedule(10, 1e-3, 0.2)
    batch = _batch(rng)
    seen = []

    def probe(e_t, e_co, bits, t, p_u):
        seen.append(p_u.copy())
        return np.zeros_like(e_t)

    training_loss(batch, probe, s, GuidanceConfig(1.0, 1.0), np.random.default_rng(2))
    assert all(np.array_equal(p, np.zeros_like(p)) for p in seen)


def test_training_loss_empty_batch():
    s = make_schedule(5, 1e-3, 0.2)
    with pytest.raises(ValueError):
        training_loss([], None, s, GuidanceConfig(), np.random.default_rng(0))


def test_training_loss_graph_matches_plain(rng):
    from genmove.denoiser import DenoiserConfig, DenoiserModel

    model = DenoiserModel(
        DenoiserConfig(embed_dim=3, d_model=8, layers=1, heads=2, conv_channels=4, context_dim=2)
    )
    s = make_schedule(10, 1e-3, 0.2)
    batch = _batch(rng, n=5, L=6, D=3, C=2)
    g = GuidanceConfig(1.0, 0.3)
    plain = training_loss(batch, model, s, g, np.random.default_rng(5))
    graph = training_loss_graph(batch, model, s, g, np.random.default_rng(5)).item()
    assert plain == pytest.approx(graph, rel=1e-9)


def test_guided_noise_collapses_at_omega_zero(rng):
    calls = []

    def model(e_t, e_co, bits, t, p_u):
        calls.append(p_u.copy())
        return e_t * 2.0

    state = DiffusionState(e_ta_t=rng.standard_normal((4, 2)), t=3)
    out = guided_noise(model, state, np.zeros((4, 2)), np.ones(4), np.ones(2), omega=0.0)
    assert len(calls) == 1
    assert np.array_equal(out, state.e_ta_t * 2.0)


def test_guided_noise_equal_branches_collapse(rng):
    c = rng.standard_normal((3, 2))
    model = lambda e_t, e_co, bits, t, p_u: c
    state = DiffusionState(e_ta_t=np.zeros((3, 2)), t=2)
    for omega in (0.0, 0.5, 1.0, 4.0):
        out = guided_noise(model, state, np.zeros((3, 2)), np.ones(3), np.ones(2), omega)
        np.testing.assert_allclose(out, c, atol=1e-12)


def test_guided_noise_omega_one_arithmetic(rng):
    outputs = []

    def model(e_t, e_co, bits, t, p_u):
        out = (2.0 if p_u.any() else -1.0) * np.ones_like(e_t)
        outputs.append(out)
        return out

    state = DiffusionState(e_ta_t=np.zeros((2, 2)), t=1)
    out = guided_noise(model, state, np.zeros((2, 2)), np.ones(2), np.ones(3), omega=1.0)
    assert len(outputs) == 2
    np.testing.assert_array_equal(out, 2 * outputs[0] - outputs[1])


def test_p_sample_step_zero_noise(rng):
    s = make_schedule(10, 1e-3, 0.2)
    e = rng.standard_normal((3, 2))
    state = DiffusionState(e_ta_t=e, t=4)
    nxt = p_sample_step(state, np.zeros_like(e), s, np.zeros_like(e))
    assert nxt.t == 3
    np.testing.assert_allclose(nxt.e_ta_t, e / np.sqrt(s.alpha_t(4)))


def test_p_sample_step_identity_in_beta_zero_limit(rng):
    tiny = 1e-15
    s = make_schedule(3, tiny, tiny)
    e = rng.standard_normal((3, 2))
    state = DiffusionState(e_ta_t=e, t=2)
    nxt = p_sample_step(state, rng.standard_normal((3, 2)), s, np.zeros_like(e))
    np.testing.assert_allclose(nxt.e_ta_t, e, atol=1e-6)


def test_p_sample_step_requires_zero_z_at_t1(rng):
    s = make_schedule(3, 1e-3, 0.2)
    state = DiffusionState(e_ta_t=np.zeros((2, 2)), t=1)
    with pytest.raises(ValueError):
        p_sample_step(state, np.zeros((2, 2)), s, np.ones((2, 2)))


def test_three_step_reverse_matches_hand_trace():
    """Independent scalar recomputation of a full T=3 reverse pass."""
    s = make_schedule(3, 0.05, 0.3)
    eps_seq = {3: 0.7, 2: -0.4, 1: 0.2}
    z_seq = {3: 0.5, 2: -1.1}
    e = 1.3
    state = DiffusionState(e_ta_t=np.array([[1.3]]), t=3)
    for t in (3, 2, 1):
        z = np.array([[z_seq.get(t, 0.0)]])
        state = p_sample_step(state, np.array([[eps_seq[t]]]), s, z)

    import math

    beta = [0.05, 0.175, 0.3]
    alpha = [1 - b for b in beta]
    abar = [alpha[0], alpha[0] * alpha[1], alpha[0] * alpha[1] * alpha[2]]
    sigma = [
        math.sqrt(beta[0]),
        math.sqrt((1 - abar[0]) / (1 - abar[1]) * beta[1]),
        math.sqrt((1 - abar[1]) / (1 - abar[2]) * beta[2]),
    ]
    for t in (3, 2, 1):
        a, ab = alpha[t - 1], abar[t - 1]
        e = (e - (1 - a) / math.sqrt(1 - ab) * eps_seq[t]) / math.sqrt(a)
        e += sigma[t - 1] * z_seq.get(t, 0.0)
    assert abs(state.e_ta_t[0, 0] - e) < 1e-6
    assert state.t == 0


def test_sample_with_oracle_model_converges(rng):
    """An exact-noise oracle makes the reverse chain contract to the target."""
    s = make_schedule(50, 2e-3, 0.4)
    target = rng.standard_normal((8, 4))

    def oracle(e_t, e_co, bits, t, p_u):
        ab = s.alpha_bar_t(t)
        return (e_t - np.sqrt(ab) * target) / np.sqrt(1 - ab)

    bits = np.zeros(8, dtype=int)
    out = sample(oracle, np.zeros((8, 4)), bits, np.zeros(2), s, omega=0.0, rng=rng)
    rmse = np.sqrt(((out - target) ** 2).mean())
    assert rmse < 1e-2


def test_sample_all_observed_returns_e_co(rng):
    s = make_schedule(5, 1e-3, 0.2)
    model = lambda e_t, e_co, bits, t, p_u: np.zeros_like(e_t)
    e_co = rng.standard_normal((4, 3))
    out = sample(model, e_co, np.ones(4, dtype=int), np.zeros(2), s, omega=1.0, rng=rng)
    assert np.array_equal(out, e_co)


def test_sample_deterministic_per_seed():
    s = make_schedule(6, 1e-3, 0.2)
    model = lambda e_t, e_co, bits, t, p_u: 0.5 * e_t
    bits = np.array([0, 1, 0])
    e_co = np.ones((3, 2))
    a = sample(model, e_co, bits, np.zeros(2), s, 0.0, np.random.default_rng(42))
    b = sample(model, e_co, bits, np.zeros(2), s, 0.0, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_sample_batch_matches_single(rng):
    from genmove.denoiser import DenoiserConfig, DenoiserModel

    model = DenoiserModel(
        DenoiserConfig(embed_dim=3, d_model=8, layers=1, heads=2, conv_channels=4, context_dim=2)
    )
    s = make_schedule(4, 1e-3, 0.2)
    e_co = rng.standard_normal((5, 3))
    bits = np.array([1, 0, 0, 1, 0])
    p_u = rng.standard_normal(2)
    single = sample(model, e_co, bits, p_u, s, 1.0, np.random.default_rng(3))
    batched = sample_batch(model, e_co[None], bits[None].astype(float), p_u[None], s, 1.0, np.random.default_rng(3))
    np.testing.assert_allclose(batched[0], single, atol=1e-10)


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(omega=-0.1)
    with pytest.raises(ValueError):
        GuidanceConfig(lambda_uncond=1.5)
