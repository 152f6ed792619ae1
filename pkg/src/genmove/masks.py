"""Masking strategies, the strategy mixture, and the observation/target split.

A mask is a per-slot 0/1 vector: 1 marks an observed (conditioning) slot,
0 marks a slot the model must produce. Five strategies cover the task
family: random missing slots, a masked terminal horizon, a fully masked
trajectory, one contiguous masked run, and the night window (00:00-06:00).
Applying a mask to an embedded trajectory splits it into the conditional
observation and the task target, which sum back to the original exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("random", "terminal", "complete", "sequential", "circadian")
NIGHT_FRACTION = 0.25  # 6 of 24 hours


class MaskError(ValueError):
    """Raised for invalid mask parameters."""


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray  # (L,) of {0, 1}, 1 = observed

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1 or not np.isin(b, (0, 1)).all():
            raise MaskError("mask bits must be a 1-D 0/1 vector")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def observed(self) -> np.ndarray:
        return self.bits.astype(bool)

    @property
    def target(self) -> np.ndarray:
        return ~self.observed

    def n_targets(self) -> int:
        return int(self.target.sum())


@dataclass(frozen=True)
class MaskMixture:
    """Categorical mixture over the five strategies plus their knobs."""

    weights: tuple[float, float, float, float, float] = (0.25, 0.20, 0.20, 0.20, 0.15)
    random_ratio: float = 0.3
    sequential_ratio: float = 0.25
    terminal_horizon: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(STRATEGIES) or (w < 0).any():
            raise MaskError("need 5 nonnegative strategy weights")
        if abs(w.sum() - 1.0) > 1e-9:
            raise MaskError("strategy weights must sum to 1")
        if not 0 < self.random_ratio < 1:
            raise MaskError("random_ratio must lie in (0, 1)")
        if not 0 < self.sequential_ratio < 1:
            raise MaskError("sequential_ratio must lie in (0, 1)")
        if self.terminal_horizon < 1:
            raise MaskError("terminal_horizon must be >= 1")


@dataclass(frozen=True)
class MaskedPair:
    e_co: np.ndarray  # (L, D) observation, zero rows at target slots
    e_ta0: np.ndarray  # (L, D) clean target, zero rows at observed slots
    mask: Mask


def sample_strategy(mixture: MaskMixture, rng: np.random.Generator) -> str:
    """Draw one strategy tag from the mixture weights."""
    idx = rng.choice(len(STRATEGIES), p=np.asarray(mixture.weights, dtype=float))
    return STRATEGIES[idx]


def sample_mask(
    strategy: str,
    length: int,
    slots_per_day: int,
    start_slot: int,
    mixture: MaskMixture,
    rng: np.random.Generator,
) -> Mask:
    """Draw a mask of the given strategy for a trajectory of `length` slots."""
    if length < 1:
        raise MaskError("length must be >= 1")
    bits = np.ones(length, dtype=np.int64)
    if strategy == "random":
        n_zero = int(np.floor(mixture.random_ratio * length))
        if n_zero > 0:
            pos = rng.choice(length, size=n_zero, replace=False)
            bits[pos] = 0
    elif strategy == "terminal":
        h = mixture.terminal_horizon
        if h >= length:
            raise MaskError(
                "terminal_horizon must be < trajectory length; use 'complete' "
                "to mask everything"
            )
        bits[length - h :] = 0
    elif strategy == "complete":
        bits[:] = 0
    elif strategy == "sequential":
        run = int(np.floor(mixture.sequential_ratio * length))
        if run > 0:
            start = int(rng.integers(0, length - run + 1))
            bits[start : start + run] = 0
    elif strategy == "circadian":
        slot_frac = ((start_slot + np.arange(length)) % slots_per_day) / slots_per_day
        bits[slot_frac < NIGHT_FRACTION] = 0
    else:
        raise MaskError(f"unknown strategy {strategy!r}")
    return Mask(bits=bits)


def terminal_mask(length: int, horizon: int) -> Mask:
    """Deterministic terminal mask: the last `horizon` slots are targets."""
    if not 1 <= horizon < length:
        raise MaskError("horizon must lie in [1, length)")
    bits = np.ones(length, dtype=np.int64)
    bits[length - horizon :] = 0
    return Mask(bits=bits)


def complete_mask(length: int) -> Mask:
    return Mask(bits=np.zeros(length, dtype=np.int64))


def random_mask(length: int, missing_ratio: float, rng: np.random.Generator) -> Mask:
    """Random mask with exactly floor(missing_ratio * length) target slots."""
    if not 0 < missing_ratio < 1:
        raise MaskError("missing_ratio must lie in (0, 1)")
    bits = np.ones(length, dtype=np.int64)
    n_zero = int(np.floor(missing_ratio * length))
    if n_zero > 0:
        bits[rng.choice(length, size=n_zero, replace=False)] = 0
    return Mask(bits=bits)


def apply_mask(e_all: np.ndarray, mask: Mask) -> MaskedPair:
    """Split an embedded trajectory into observation and target (elementwise)."""
    if e_all.shape[0] != len(mask):
        raise MaskError("mask length does not match trajectory length")
    m = mask.bits[:, None].astype(e_all.dtype)
    return MaskedPair(e_co=e_all * m, e_ta0=e_all * (1.0 - m), mask=mask)
