"""Evaluation metrics: mobility statistics with JSD, recovery and ranking scores.

Six trajectory statistics (travel distance, radius of gyration, stay
duration, daily distinct locations, visit density, stay-run trips) are
reduced to normalized histograms and compared with the base-2
Jensen-Shannon divergence, so every divergence lies in [0, 1]. Recovery is
scored by top-k recall, mean reciprocal rank of the ground truth, and the
mean geographic error of the top-1 decode in meters; prediction by
accuracy@k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .context import radius_of_gyration

M_PER_KM = 1000.0
DEFAULT_BINS = 50

STATISTIC_NAMES = ("distance", "radius", "duration", "daily_loc", "density", "trip")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # B+1 ascending bin boundaries
    mass: np.ndarray  # B nonnegative weights, normalized to 1
    categories: tuple | None = None  # bin identities for categorical statistics

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if len(edges) != len(mass) + 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be ascending and one longer than mass")
        if np.any(mass < 0):
            raise ValueError("mass must be nonnegative")
        total = mass.sum()
        if total <= 0:
            raise ValueError("histogram has no mass")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass / total)
        if self.categories is not None and len(self.categories) != len(mass):
            raise ValueError("one category per bin required")


def histogram_continuous(values, edges) -> Histogram:
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=np.asarray(edges))
    return Histogram(edges=np.asarray(edges, dtype=float), mass=counts.astype(float))


def histogram_categorical(values, categories) -> Histogram:
    index = {c: i for i, c in enumerate(categories)}
    mass = np.zeros(len(categories))
    for v in values:
        mass[index[v]] += 1.0
    return Histogram(
        edges=np.arange(len(categories) + 1, dtype=float),
        mass=mass,
        categories=tuple(categories),
    )


def equal_width_edges(values, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def jsd(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence between two identically binned histograms."""
    if not np.array_equal(p.edges, q.edges) or p.categories != q.categories:
        raise ValueError("histograms must share the same binning")
    pm, qm = p.mass, q.mass
    mid = 0.5 * (pm + qm)

    def kl(a, m):
        nz = a > 0
        return float((a[nz] * np.log2(a[nz] / m[nz])).sum())

    return 0.5 * kl(pm, mid) + 0.5 * kl(qm, mid)


# -- mobility statistics -------------------------------------------------------


def stay_runs(locations) -> list[tuple[int, int]]:
    """Run-length encode a location sequence into (location, length) stays."""
    runs = []
    for loc in locations:
        if runs and runs[-1][0] == loc:
            runs[-1][1] += 1
        else:
            runs.append([loc, 1])
    return [(int(a), int(b)) for a, b in runs]


def mobility_values(trajs, vocabulary, slots_per_day: int) -> dict:
    """Raw per-statistic observations backing the six histograms."""
    coords = np.array([[loc.x, loc.y] for loc in vocabulary])
    day_travel: dict[tuple[int, int], float] = {}
    day_locs: dict[tuple[int, int], set] = {}
    user_coords: dict[int, list] = {}
    durations: list[int] = []
    visits = np.zeros(len(vocabulary))
    trips: list[tuple[int, int]] = []

    for traj in trajs:
        ids = np.asarray(traj.locations)
        xy = coords[ids]
        user_coords.setdefault(traj.user_id, []).append(xy)
        days = (traj.start_slot + np.arange(len(ids))) // slots_per_day
        for i in range(len(ids) - 1):
            if days[i] == days[i + 1]:
                key = (traj.user_id, int(days[i]))
                step = float(np.linalg.norm(xy[i + 1] - xy[i]))
                day_travel[key] = day_travel.get(key, 0.0) + step
        for i, d in enumerate(days):
            key = (traj.user_id, int(d))
            day_travel.setdefault(key, 0.0)
            day_locs.setdefault(key, set()).add(int(ids[i]))
        runs = stay_runs(traj.locations)
        durations.extend(length for _, length in runs)
        trips.extend((runs[i][0], runs[i + 1][0]) for i in range(len(runs) - 1))
        np.add.at(visits, ids, 1.0)

    return {
        "distance": np.array([day_travel[k] for k in sorted(day_travel)]),
        "radius": np.array(
            [radius_of_gyration(np.concatenate(user_coords[u])) for u in sorted(user_coords)]
        ),
        "duration": np.array(durations, dtype=int),
        "daily_loc": np.array([len(day_locs[k]) for k in sorted(day_locs)], dtype=int),
        "density": visits,
        "trip": trips,
    }


def _histograms_from_values(values: dict, vocabulary, supports: dict) -> dict:
    out = {}
    out["distance"] = histogram_continuous(values["distance"], supports["distance"])
    out["radius"] = histogram_continuous(values["radius"], supports["radius"])
    out["duration"] = histogram_categorical(values["duration"], supports["duration"])
    out["daily_loc"] = histogram_categorical(values["daily_loc"], supports["daily_loc"])
    out["density"] = Histogram(
        edges=np.arange(len(vocabulary) + 1, dtype=float),
        mass=values["density"],
        categories=tuple(range(len(vocabulary))),
    )
    if values["trip"] and supports["trip"]:
        out["trip"] = histogram_categorical(values["trip"], supports["trip"])
    return out


def _supports(values: dict, n_bins: int, other: dict | None = None) -> dict:
    def pooled(name):
        v = np.asarray(values[name], dtype=float)
        if other is not None:
            v = np.concatenate([v, np.asarray(other[name], dtype=float)])
        return v

    trip_pairs = set(values["trip"])
    if other is not None:
        trip_pairs |= set(other["trip"])
    return {
        "distance": equal_width_edges(pooled("distance"), n_bins),
        "radius": equal_width_edges(pooled("radius"), n_bins),
        "duration": tuple(range(1, int(pooled("duration").max()) + 1)),
        "daily_loc": tuple(range(1, int(pooled("daily_loc").max()) + 1)),
        "trip": tuple(sorted(trip_pairs)),
    }


def mobility_statistics(
    trajs, vocabulary, slots_per_day: int, n_bins: int = DEFAULT_BINS
) -> dict[str, Histogram]:
    """The six statistics of one trajectory set, each as a normalized histogram."""
    if not trajs:
        raise ValueError("need at least one trajectory")
    values = mobility_values(trajs, vocabulary, slots_per_day)
    return _histograms_from_values(values, vocabulary, _supports(values, n_bins))


def compare_mobility(
    real_trajs, generated_trajs, vocabulary, slots_per_day: int, n_bins: int = DEFAULT_BINS
) -> tuple[dict[str, float], dict[str, tuple[Histogram, Histogram]]]:
    """JSD of each mobility statistic between two trajectory sets.

    Histograms are built on pooled supports (shared equal-width edges for
    continuous statistics, unions of observed categories otherwise) so every
    pair is directly comparable. Returns (divergences, histogram pairs).
    """
    rv = mobility_values(real_trajs, vocabulary, slots_per_day)
    gv = mobility_values(generated_trajs, vocabulary, slots_per_day)
    supports = _supports(rv, n_bins, gv)
    rh = _histograms_from_values(rv, vocabulary, supports)
    gh = _histograms_from_values(gv, vocabulary, supports)
    divergences = {name: jsd(rh[name], gh[name]) for name in rh if name in gh}
    return divergences, {name: (rh[name], gh[name]) for name in divergences}


# -- recovery and prediction ---------------------------------------------------


@dataclass(frozen=True)
class RecoveryScores:
    recall: float
    map: float
    distance_m: float


def recovery_scores(
    recovered_rankings, truths, vocabulary, k: int = 1
) -> RecoveryScores:
    """Score per-slot recovery rankings against ground-truth location ids.

    recall: fraction of slots with the truth in the top-k; map: mean
    reciprocal rank of the truth (0 when absent from a ranking); distance_m:
    mean Euclidean distance between the top-1 location and the truth.
    """
    if len(recovered_rankings) != len(truths) or not truths:
        raise ValueError("need one nonempty ranking per missing slot")
    coords = np.array([[loc.x, loc.y] for loc in vocabulary])
    hits, rr, dist = [], [], []
    for ranking, truth in zip(recovered_rankings, truths):
        if not 0 <= truth < len(vocabulary):
            raise ValueError(f"truth id {truth} outside vocabulary")
        ranking = list(ranking)
        hits.append(truth in ranking[:k])
        rr.append(1.0 / (ranking.index(truth) + 1) if truth in ranking else 0.0)
        dist.append(float(np.linalg.norm(coords[ranking[0]] - coords[truth])))
    return RecoveryScores(
        recall=float(np.mean(hits)),
        map=float(np.mean(rr)),
        distance_m=float(np.mean(dist)) * M_PER_KM,
    )


def accuracy_at_k(rankings, truths, k: int) -> float:
    """Fraction of queries whose truth appears within the first k entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rankings) != len(truths) or not truths:
        raise ValueError("need one ranking per truth")
    return float(np.mean([t in list(r)[:k] for r, t in zip(rankings, truths)]))


@dataclass(frozen=True)
class EvalReport:
    values: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, v in self.values.items():
            if not np.isfinite(v):
                raise ValueError(f"non-finite metric {key!r}")

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "metrics": {k: float(v) for k, v in sorted(self.values.items())},
            "metadata": dict(self.metadata),
        }
