"""Trajectory data model, synthetic mobility generation, persistence, splits.

Locations live on a square grid with coordinates in kilometers (one cell =
1 km). Trajectories are fixed-interval location sequences; with the default
48 slots per day one slot is 30 minutes. A Dataset keeps each user's most
recent day as the "current" trajectory and all earlier days as per-day
history trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CELL_KM = 1.0  # grid cell edge length

# Synthetic-generator constants (not exposed as parameters): probability that
# a daytime slot triggers a relocation step, and the nighttime window
# (fraction of the day) during which users snap to their home cell with
# probability `home_bias`. The window covers 22:00-24:00 and 0:00-6:00.
DAY_MOVE_PROB = 0.6
NIGHT_START_FRAC = 11.0 / 12.0
NIGHT_END_FRAC = 0.25

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class LocationReferenceError(ValueError):
    """Raised when a trajectory references a location id outside the vocabulary."""


@dataclass(frozen=True)
class Location:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Trajectory:
    user_id: int
    start_slot: int
    locations: tuple[int, ...]

    def __post_init__(self):
        if len(self.locations) == 0:
            raise ValueError("trajectory must contain at least one location")

    def __len__(self) -> int:
        return len(self.locations)


@dataclass(frozen=True)
class Dataset:
    vocabulary: tuple[Location, ...]
    trajectories: tuple[Trajectory, ...]
    histories: dict[int, tuple[Trajectory, ...]] = field(default_factory=dict)
    slots_per_day: int = 48

    def __post_init__(self):
        n = len(self.vocabulary)
        for i, loc in enumerate(self.vocabulary):
            if loc.id != i:
                raise ValueError("vocabulary ids must be dense 0..V-1")
            if not (np.isfinite(loc.x) and np.isfinite(loc.y)):
                raise ValueError(f"non-finite coordinates for location {loc.id}")
        for traj in self.trajectories:
            _check_ids(traj, n)
        for trajs in self.histories.values():
            for traj in trajs:
                _check_ids(traj, n)

    @property
    def n_locations(self) -> int:
        return len(self.vocabulary)

    def users(self) -> list[int]:
        """User ids appearing in current trajectories, in first-seen order."""
        seen: dict[int, None] = {}
        for traj in self.trajectories:
            seen.setdefault(traj.user_id, None)
        return list(seen)

    def coordinates(self) -> np.ndarray:
        """(V, 2) array of location coordinates in km."""
        return np.array([[loc.x, loc.y] for loc in self.vocabulary], dtype=float)


def _check_ids(traj: Trajectory, n_locations: int) -> None:
    for loc in traj.locations:
        if not 0 <= loc < n_locations:
            raise LocationReferenceError(
                f"location id {loc} outside vocabulary of size {n_locations}"
            )


@dataclass(frozen=True)
class EprParams:
    """Parameters of the exploration/preferential-return generator."""

    rho: float = 0.4
    gamma: float = 0.6
    n_users: int = 100
    days: int = 7
    grid_side: int = 16
    home_bias: float = 0.85
    seed: int = 0
    slots_per_day: int = 48

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_users < 1 or self.days < 1 or self.slots_per_day < 1:
            raise ValueError("n_users, days and slots_per_day must be positive")
        if self.grid_side * self.grid_side < 2:
            raise ValueError("grid must contain at least 2 cells")
        if not 0 <= self.home_bias <= 1:
            raise ValueError("home_bias must lie in [0, 1]")


def _grid_vocabulary(grid_side: int) -> tuple[Location, ...]:
    locs = []
    for i in range(grid_side):
        for j in range(grid_side):
            locs.append(Location(id=i * grid_side + j, x=j * CELL_KM, y=i * CELL_KM))
    return tuple(locs)


def _is_night(slot: int, slots_per_day: int) -> bool:
    frac = (slot % slots_per_day) / slots_per_day
    return frac < NIGHT_END_FRAC or frac >= NIGHT_START_FRAC


def synthesize_epr(params: EprParams) -> Dataset:
    """Generate a synthetic dataset with an exploration/preferential-return walk.

    Each user starts at a random home cell. During the night window they sit
    at home with probability ``home_bias``. Otherwise, when a relocation step
    fires, they explore an unvisited cell with probability
    ``min(1, rho * S**-gamma)`` (S = number of distinct cells visited so far),
    choosing among unvisited cells with weight inversely proportional to the
    distance from the current cell; with the complementary probability they
    return to a visited cell proportionally to its visit count.

    The last day of every user becomes a "current" trajectory; all earlier
    days become per-day history trajectories.
    """
    rng = np.random.default_rng(params.seed)
    vocab = _grid_vocabulary(params.grid_side)
    coords = np.array([[loc.x, loc.y] for loc in vocab])
    n_cells = len(vocab)
    spd = params.slots_per_day
    total = params.days * spd

    trajectories = []
    histories: dict[int, tuple[Trajectory, ...]] = {}
    for user in range(params.n_users):
        home = int(rng.integers(n_cells))
        visits = np.zeros(n_cells, dtype=float)
        visits[home] = 1.0
        current = home
        locs = np.empty(total, dtype=np.int64)
        locs[0] = home
        for slot in range(1, total):
            if _is_night(slot, spd) and rng.random() < params.home_bias:
                current = home
            elif rng.random() < DAY_MOVE_PROB:
                visited = visits > 0
                n_visited = int(visited.sum())
                p_explore = min(1.0, params.rho * n_visited ** (-params.gamma))
                if n_visited < n_cells and rng.random() < p_explore:
                    cand = np.flatnonzero(~visited)
                    dist = np.linalg.norm(coords[cand] - coords[current], axis=1)
                    w = 1.0 / np.maximum(dist, 1e-12)
                    current = int(rng.choice(cand, p=w / w.sum()))
                else:
                    current = int(rng.choice(n_cells, p=visits / visits.sum()))
            visits[current] += 1.0
            locs[slot] = current

        days = [
            Trajectory(
                user_id=user,
                start_slot=d * spd,
                locations=tuple(int(v) for v in locs[d * spd : (d + 1) * spd]),
            )
            for d in range(params.days)
        ]
        trajectories.append(days[-1])
        if len(days) > 1:
            histories[user] = tuple(days[:-1])

    return Dataset(
        vocabulary=vocab,
        trajectories=tuple(trajectories),
        histories=histories,
        slots_per_day=spd,
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as JSON lines (header line, then one line per trajectory)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "version": FORMAT_VERSION,
            "slots_per_day": dataset.slots_per_day,
            "vocabulary": [
                {"id": loc.id, "x": loc.x, "y": loc.y} for loc in dataset.vocabulary
            ],
        }
        fh.write(json.dumps(header) + "\n")
        for traj in dataset.trajectories:
            fh.write(_traj_line(traj, "current") + "\n")
        for user, trajs in dataset.histories.items():
            for traj in trajs:
                fh.write(_traj_line(traj, "history") + "\n")


def _traj_line(traj: Trajectory, role: str) -> str:
    return json.dumps(
        {
            "user": traj.user_id,
            "start_slot": traj.start_slot,
            "role": role,
            "locs": list(traj.locations),
        }
    )


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file")
    try:
        header = json.loads(lines[0])
        vocab = tuple(
            Location(id=int(e["id"]), x=float(e["x"]), y=float(e["y"]))
            for e in header["vocabulary"]
        )
        spd = int(header["slots_per_day"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"line 1: malformed header ({exc})") from exc

    n = len(vocab)
    trajectories: list[Trajectory] = []
    histories: dict[int, list[Trajectory]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            traj = Trajectory(
                user_id=int(row["user"]),
                start_slot=int(row["start_slot"]),
                locations=tuple(int(v) for v in row["locs"]),
            )
            role = row["role"]
            if role not in ("current", "history"):
                raise ValueError(f"unknown role {role!r}")
        except LocationReferenceError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"line {lineno}: malformed row ({exc})") from exc
        _check_ids(traj, n)
        if role == "current":
            trajectories.append(traj)
        else:
            histories.setdefault(traj.user_id, []).append(traj)

    return Dataset(
        vocabulary=vocab,
        trajectories=tuple(trajectories),
        histories={u: tuple(ts) for u, ts in histories.items()},
        slots_per_day=spd,
    )


def split_by_user(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition users into train/valid/test datasets.

    The first two splits get ``floor(fraction * n_users)`` users each and the
    test split gets the remainder, so every size is within one user of its
    target fraction. The same seed always yields the same assignment.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    users = dataset.users()
    if len(users) < 3:
        raise ValueError("need at least 3 users to split")
    order = np.random.default_rng(seed).permutation(len(users))
    shuffled = [users[i] for i in order]
    n = len(users)
    n_train = int(np.floor(fractions[0] * n))
    n_valid = int(np.floor(fractions[1] * n))
    groups = (
        set(shuffled[:n_train]),
        set(shuffled[n_train : n_train + n_valid]),
        set(shuffled[n_train + n_valid :]),
    )
    return tuple(_subset(dataset, g) for g in groups)  # type: ignore[return-value]


def _subset(dataset: Dataset, users: set) -> Dataset:
    return Dataset(
        vocabulary=dataset.vocabulary,
        trajectories=tuple(t for t in dataset.trajectories if t.user_id in users),
        histories={u: ts for u, ts in dataset.histories.items() if u in users},
        slots_per_day=dataset.slots_per_day,
    )
