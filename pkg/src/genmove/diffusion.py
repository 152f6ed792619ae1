"""Noise schedule, forward noising, training loss and guided reverse sampling.

The forward chain noises the clean target with the closed form
``e_t = sqrt(abar_t) e_0 + sqrt(1 - abar_t) eps``; the reverse chain removes
the predicted noise step by step,
``e_{t-1} = (e_t - (1-alpha_t)/sqrt(1-abar_t) * eps~) / sqrt(alpha_t) + sigma_t z``.
Sampling guides the noise estimate with the classifier-free combination
``eps~ = (1+omega) eps(cond) - omega eps(null)``; the null context is the
all-zero vector. The training loss scores predicted noise against the true
noise on target entries only, dropping the user context with probability
lambda so the same network learns the unconditional model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .masks import Mask


class ScheduleError(ValueError):
    """Raised for invalid noise-schedule parameters."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by step-1 (index 0 holds step t=1)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def beta_t(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_t(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_t(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])

    def sigma_t(self, t: int) -> float:
        return float(self.sigma[t - 1])


@dataclass(frozen=True)
class GuidanceConfig:
    omega: float = 1.0
    lambda_uncond: float = 0.1

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if not 0 <= self.lambda_uncond <= 1:
            raise ValueError("lambda_uncond must lie in [0, 1]")


@dataclass(frozen=True)
class DiffusionState:
    e_ta_t: np.ndarray  # (L, D)
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("step must be >= 0")


def make_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear"
) -> NoiseSchedule:
    """Linear beta schedule plus the derived alpha, alpha_bar and sigma arrays."""
    if kind != "linear":
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.empty(T)
    sigma[0] = np.sqrt(beta[0])
    if T > 1:
        beta_tilde = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
        sigma[1:] = np.sqrt(beta_tilde)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def q_sample(e_ta0: np.ndarray, t: int, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-noise the clean target to step t with the given noise draw."""
    if not 1 <= t <= schedule.T:
        raise ValueError("t must lie in [1, T]")
    ab = schedule.alpha_bar_t(t)
    return np.sqrt(ab) * e_ta0 + np.sqrt(1.0 - ab) * epsilon


def _mask_bits(mask) -> np.ndarray:
    return mask.bits if isinstance(mask, Mask) else np.asarray(mask)


def _draw_batch(batch, schedule: NoiseSchedule, guidance: GuidanceConfig, rng):
    """Per-item (t, eps, keep-context) draws, fixed order for reproducibility."""
    ts, epss, keeps = [], [], []
    for e_ta0, _, _, _ in batch:
        ts.append(int(rng.integers(1, schedule.T + 1)))
        epss.append(rng.standard_normal(np.asarray(e_ta0).shape))
        keeps.append(rng.random() >= guidance.lambda_uncond)
    return ts, epss, keeps


def training_loss(batch, model, schedule: NoiseSchedule, guidance: GuidanceConfig, rng) -> float:
    """Mean squared noise-prediction error over target entries (Eq.-style loss).

    `batch` is a sequence of (e_ta0, e_co, mask, p_u) tuples; `model` is any
    callable (e_ta_t, e_co, mask_bits, t, p_u) -> (L, D). Each item's context
    is replaced by the null (zero) vector with probability lambda.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    ts, epss, keeps = _draw_batch(batch, schedule, guidance, rng)
    total = 0.0
    for (e_ta0, e_co, mask, p_u), t, eps, keep in zip(batch, ts, epss, keeps):
        bits = _mask_bits(mask)
        e_t = q_sample(np.asarray(e_ta0, dtype=float), t, eps, schedule)
        p = np.asarray(p_u, dtype=float)
        if not keep:
            p = np.zeros_like(p)
        eps_hat = np.asarray(model(e_t, np.asarray(e_co, dtype=float), bits, t, p))
        target = (1.0 - bits)[:, None]
        n_entries = target.sum() * e_t.shape[1]
        if n_entries > 0:
            total += float((((eps - eps_hat) ** 2) * target).sum() / n_entries)
    return total / len(batch)


def training_loss_graph(
    batch,
    model,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    rng,
    p_u_vars: Var | None = None,
) -> Var:
    """Same loss as :func:`training_loss`, built through the autodiff graph.

    All items must share the trajectory length. `p_u_vars` optionally
    supplies the stacked (B, C) contexts as a graph node (e.g. the output of
    the history encoder) so gradients flow into the encoder; context dropout
    is applied here either way.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    ts, epss, keeps = _draw_batch(batch, schedule, guidance, rng)
    e_ta0 = np.stack([np.asarray(item[0], dtype=float) for item in batch])
    e_co = np.stack([np.asarray(item[1], dtype=float) for item in batch])
    bits = np.stack([_mask_bits(item[2]) for item in batch]).astype(float)
    eps = np.stack(epss)
    ab = schedule.alpha_bar[np.asarray(ts) - 1][:, None, None]
    e_t = np.sqrt(ab) * e_ta0 + np.sqrt(1.0 - ab) * eps

    keep_col = np.asarray(keeps, dtype=float)[:, None]
    if p_u_vars is None:
        p_var = Var(np.stack([np.asarray(item[3], dtype=float) for item in batch]) * keep_col)
    else:
        p_var = p_u_vars * Var(keep_col)

    eps_hat = model.forward_vars(e_t, e_co, bits, np.asarray(ts), p_var)
    target = (1.0 - bits)[:, :, None]
    n_entries = target.sum(axis=(1, 2)) * e_ta0.shape[2]
    weight = target / np.maximum(n_entries, 1.0)[:, None, None] / len(batch)
    diff = eps_hat - Var(eps)
    return ad.vsum(ad.square(diff) * Var(weight))


def guided_noise(model, state: DiffusionState, e_co, mask, p_u, omega: float) -> np.ndarray:
    """Classifier-free-guided noise estimate at the state's step.

    Exactly one model evaluation when omega == 0, two otherwise.
    """
    bits = _mask_bits(mask)
    cond = np.asarray(model(state.e_ta_t, e_co, bits, state.t, p_u))
    if omega == 0:
        return cond
    null = np.zeros_like(np.asarray(p_u, dtype=float))
    uncond = np.asarray(model(state.e_ta_t, e_co, bits, state.t, null))
    return (1.0 + omega) * cond - omega * uncond


def p_sample_step(
    state: DiffusionState, epsilon_tilde: np.ndarray, schedule: NoiseSchedule, z
) -> DiffusionState:
    """One reverse-diffusion step from t to t-1."""
    t = state.t
    if t < 1:
        raise ValueError("cannot step below t=1")
    z = np.asarray(z, dtype=float)
    if t == 1 and np.any(z != 0):
        raise ValueError("z must be 0 at the final step (t=1)")
    a = schedule.alpha_t(t)
    ab = schedule.alpha_bar_t(t)
    mean = (state.e_ta_t - (1.0 - a) / np.sqrt(1.0 - ab) * epsilon_tilde) / np.sqrt(a)
    return DiffusionState(e_ta_t=mean + schedule.sigma_t(t) * z, t=t - 1)


def sample(model, e_co, mask, p_u, schedule: NoiseSchedule, omega: float, rng) -> np.ndarray:
    """Reverse-sample the full trajectory embedding under the mask condition.

    Runs the guided chain from t=T down to 1, then overwrites observed rows
    with the conditional observation so conditioning is exact there.
    """
    e_co = np.asarray(e_co, dtype=float)
    bits = _mask_bits(mask)
    state = DiffusionState(e_ta_t=rng.standard_normal(e_co.shape), t=schedule.T)
    for t in range(schedule.T, 0, -1):
        eps_tilde = guided_noise(model, state, e_co, bits, p_u, omega)
        z = rng.standard_normal(e_co.shape) if t > 1 else np.zeros_like(e_co)
        state = p_sample_step(state, eps_tilde, schedule, z)
    observed = bits[:, None].astype(bool)
    return np.where(observed, e_co, state.e_ta_t)


def sample_batch(
    model, e_co: np.ndarray, bits: np.ndarray, p_u: np.ndarray, schedule: NoiseSchedule,
    omega: float, rng,
) -> np.ndarray:
    """Vectorized :func:`sample` over (N, L, D) cases sharing the schedule."""
    e_co = np.asarray(e_co, dtype=float)
    bits = np.asarray(bits, dtype=float)
    p_u = np.asarray(p_u, dtype=float)
    n = e_co.shape[0]
    e = rng.standard_normal(e_co.shape)
    ts = np.empty(n, dtype=int)
    for t in range(schedule.T, 0, -1):
        ts[:] = t
        cond = model.predict_batch(e, e_co, bits, ts, p_u)
        if omega == 0:
            eps_tilde = cond
        else:
            uncond = model.predict_batch(e, e_co, bits, ts, np.zeros_like(p_u))
            eps_tilde = (1.0 + omega) * cond - omega * uncond
        a = schedule.alpha_t(t)
        ab = schedule.alpha_bar_t(t)
        e = (e - (1.0 - a) / np.sqrt(1.0 - ab) * eps_tilde) / np.sqrt(a)
        if t > 1:
            e = e + schedule.sigma_t(t) * rng.standard_normal(e_co.shape)
    observed = bits[:, :, None].astype(bool)
    return np.where(observed, e_co, e)
