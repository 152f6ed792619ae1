"""Trivial comparison baselines: uniform generator, linear interpolation,
persistence, first-order Markov."""

from __future__ import annotations

import numpy as np

from .data import Dataset, Trajectory
from .masks import Mask


def uniform_random_trajectories(
    n_samples: int, length: int, n_locations: int, rng, start_slot: int = 0
) -> list[Trajectory]:
    """Location sequences drawn uniformly at random over the vocabulary."""
    return [
        Trajectory(
            user_id=-(i + 1),
            start_slot=start_slot,
            locations=tuple(int(v) for v in rng.integers(0, n_locations, size=length)),
        )
        for i in range(n_samples)
    ]


def linear_interp_rankings(
    locations, mask: Mask, coords: np.ndarray, k: int
) -> list[list[int]]:
    """Recover missing slots by interpolating coordinates between flanks.

    Each missing slot gets the locations ranked by distance to the
    interpolated point (ties broken by id). Missing prefixes/suffixes reuse
    the nearest observed point.
    """
    bits = mask.bits
    observed = np.flatnonzero(bits == 1)
    missing = np.flatnonzero(bits == 0)
    if len(observed) == 0:
        raise ValueError("linear interpolation needs at least one observed slot")
    ids = np.arange(len(coords))
    rankings = []
    for slot in missing:
        left = observed[observed < slot]
        right = observed[observed > slot]
        if len(left) and len(right):
            i, j = left[-1], right[0]
            frac = (slot - i) / (j - i)
            point = (1 - frac) * coords[locations[i]] + frac * coords[locations[j]]
        elif len(left):
            point = coords[locations[left[-1]]]
        else:
            point = coords[locations[right[0]]]
        d2 = np.einsum("vd,vd->v", coords - point, coords - point)
        rankings.append([int(v) for v in np.lexsort((ids, d2))[:k]])
    return rankings


def persistence_ranking(locations, n_observed: int) -> list[int]:
    """Predict the last observed location (single-candidate ranking)."""
    if n_observed < 1:
        raise ValueError("persistence needs at least one observed slot")
    return [int(locations[n_observed - 1])]


class MarkovModel:
    """First-order transition counts over location sequences."""

    def __init__(self, n_locations: int):
        self.counts = np.zeros((n_locations, n_locations))
        self.visits = np.zeros(n_locations)

    def fit(self, dataset: Dataset) -> "MarkovModel":
        for traj in list(dataset.trajectories) + [
            t for ts in dataset.histories.values() for t in ts
        ]:
            ids = np.asarray(traj.locations)
            np.add.at(self.counts, (ids[:-1], ids[1:]), 1.0)
            np.add.at(self.visits, ids, 1.0)
        return self

    def rank(self, last_location: int, k: int) -> list[int]:
        """Top-k next locations by transition count; global frequency fallback."""
        row = self.counts[last_location]
        if row.sum() == 0:
            row = self.visits
        ids = np.arange(len(row))
        order = np.lexsort((ids, -row))
        return [int(v) for v in order[:k]]

    def rank_rollout(self, last_location: int, horizon: int, k: int) -> list[list[int]]:
        """Greedy multi-step rankings: argmax chain, top-k per step."""
        out = []
        cur = last_location
        for _ in range(horizon):
            ranking = self.rank(cur, k)
            out.append(ranking)
            cur = ranking[0]
        return out
