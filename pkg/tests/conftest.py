from __future__ import annotations

import numpy as np
import pytest

from genmove.data import Dataset, EprParams, Location, Trajectory, synthesize_epr


@pytest.fixture(scope="session")
def grid_vocab():
    """4x4 unit grid vocabulary."""
    return tuple(
        Location(id=i * 4 + j, x=float(j), y=float(i)) for i in range(4) for j in range(4)
    )


@pytest.fixture(scope="session")
def small_dataset():
    return synthesize_epr(
        EprParams(n_users=12, days=3, grid_side=5, seed=7, slots_per_day=12)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_dataset(vocab, rows, spd=4):
    """rows: list of (user, start_slot, locs) for current trajectories."""
    return Dataset(
        vocabulary=vocab,
        trajectories=tuple(
            Trajectory(user_id=u, start_slot=s, locations=tuple(l)) for u, s, l in rows
        ),
        slots_per_day=spd,
    )
