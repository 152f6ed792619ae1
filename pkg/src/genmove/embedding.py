"""Spatial graph construction, LINE-style location embeddings, decode.

The spatial graph connects each location to its k nearest Euclidean
neighbors, with edge weights equal to the exact pairwise distance in km.
Embeddings are trained with the second-order LINE objective: each directed
edge (u, v) is a (vertex, context) pair scored by a sigmoid, with a handful
of negative contexts drawn proportionally to degree**0.75. Trajectories are
embedded by row lookup; a denoised vector is mapped back to discrete
locations by exact nearest-neighbor search over the table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import Trajectory


class GraphError(ValueError):
    """Raised when a graph cannot support the requested operation."""


@dataclass(frozen=True)
class SpatialGraph:
    n_nodes: int
    src: np.ndarray  # (E,) int, both directions of every undirected edge
    dst: np.ndarray  # (E,) int
    weight: np.ndarray  # (E,) float km

    @property
    def n_undirected(self) -> int:
        return len(self.src) // 2

    def degrees(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n_nodes).astype(float)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: np.ndarray  # (V, dim)

    def __post_init__(self):
        if self.vectors.shape[1] != self.dim:
            raise ValueError("vector width does not match dim")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite entries")


@dataclass(frozen=True)
class EmbeddedTrajectory:
    values: np.ndarray  # (L, dim)


def build_spatial_graph(vocabulary, k_nearest: int) -> SpatialGraph:
    """Symmetrized k-nearest-neighbor graph over location coordinates."""
    n = len(vocabulary)
    if not 1 <= k_nearest < n:
        raise ValueError("k_nearest must lie in [1, V)")
    coords = np.array([[loc.x, loc.y] for loc in vocabulary])
    tree = cKDTree(coords)
    # k+1 because the nearest hit of each point is itself
    _, idx = tree.query(coords, k=k_nearest + 1)
    pairs = set()
    for i in range(n):
        for j in idx[i]:
            j = int(j)
            if j == i:
                continue
            pairs.add((min(i, j), max(i, j)))
        # guard against duplicate coordinates where self may be dropped
        count = sum(1 for j in idx[i] if int(j) != i)
        if count < k_nearest:
            extra = tree.query(coords[i], k=min(n, k_nearest + 2))[1]
            for j in extra:
                j = int(j)
                if j != i:
                    pairs.add((min(i, j), max(i, j)))
    und = np.array(sorted(pairs), dtype=np.int64)
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    w = np.linalg.norm(coords[src] - coords[dst], axis=1)
    return SpatialGraph(n_nodes=n, src=src, dst=dst, weight=w)


def train_embeddings(
    graph: SpatialGraph,
    dim: int,
    epochs: int,
    negatives: int = 5,
    lr: float = 0.05,
    seed: int = 0,
) -> EmbeddingTable:
    """Second-order LINE with negative sampling, plain SGD over edge batches.

    Directed edges are visited uniformly (one shuffled pass per epoch);
    negatives are drawn proportionally to degree**0.75. Returns the vertex
    vectors; the context vectors are discarded after training.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if len(graph.src) == 0:
        raise GraphError("cannot train embeddings on a graph with no edges")
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    vec = (rng.random((n, dim)) - 0.5) / dim
    ctx = (rng.random((n, dim)) - 0.5) / dim

    neg_p = graph.degrees() ** 0.75
    neg_p /= neg_p.sum()
    batch = 256
    n_edges = len(graph.src)
    for _ in range(epochs):
        order = rng.permutation(n_edges)
        for lo in range(0, n_edges, batch):
            sel = order[lo : lo + batch]
            u = graph.src[sel]
            v = graph.dst[sel]
            neg = rng.choice(n, size=(len(sel), negatives), p=neg_p)

            vu = vec[u]  # (B, dim)
            # positive pairs: maximize log sigmoid(vu . cv)
            cv = ctx[v]
            g_pos = 1.0 - _sigmoid(np.einsum("bd,bd->b", vu, cv))  # (B,)
            d_vu = g_pos[:, None] * cv
            d_cv = g_pos[:, None] * vu
            # negative pairs: maximize log sigmoid(-vu . cn)
            cn = ctx[neg]  # (B, K, dim)
            g_neg = _sigmoid(np.einsum("bd,bkd->bk", vu, cn))  # (B, K)
            d_vu -= np.einsum("bk,bkd->bd", g_neg, cn)
            d_cn = -g_neg[:, :, None] * vu[:, None, :]

            np.add.at(vec, u, lr * d_vu)
            np.add.at(ctx, v, lr * d_cv)
            np.add.at(ctx, neg.ravel(), lr * d_cn.reshape(-1, dim))
    return EmbeddingTable(dim=dim, vectors=vec)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def embed(traj: Trajectory, table: EmbeddingTable) -> EmbeddedTrajectory:
    """Stack the embedding vectors of the trajectory's locations into (L, dim)."""
    ids = np.asarray(traj.locations, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= len(table.vectors):
        raise ValueError("trajectory references ids outside the embedding table")
    return EmbeddedTrajectory(values=table.vectors[ids].copy())


def decode(vector: np.ndarray, table: EmbeddingTable, k: int) -> list[int]:
    """The k location ids nearest to `vector`, ascending distance, ties by id."""
    if not 1 <= k <= len(table.vectors):
        raise ValueError("k must lie in [1, V]")
    d2 = np.einsum("vd,vd->v", table.vectors - vector, table.vectors - vector)
    order = np.lexsort((np.arange(len(d2)), d2))
    return [int(i) for i in order[:k]]


def decode_batch(vectors: np.ndarray, table: EmbeddingTable, k: int) -> np.ndarray:
    """Vectorized :func:`decode` over (N, dim) rows; returns (N, k) ids."""
    if not 1 <= k <= len(table.vectors):
        raise ValueError("k must lie in [1, V]")
    diff = vectors[:, None, :] - table.vectors[None, :, :]
    d2 = np.einsum("nvd,nvd->nv", diff, diff)
    ids = np.arange(table.vectors.shape[0])
    out = np.empty((len(vectors), k), dtype=np.int64)
    for i in range(len(vectors)):
        out[i] = np.lexsort((ids, d2[i]))[:k]
    return out
