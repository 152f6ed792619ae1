"""User context: history encoder, trajectory features, conditional flow.

The history encoder runs an LSTM over a user's concatenated history
embeddings and projects the final hidden state to the context width; users
with no history get the null context (all zeros). The conditional flow is a
stack of affine coupling layers conditioned on trajectory features (radius
of gyration); it maps base normal draws to context embeddings so generation
can be steered toward a requested radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamStore, Var
from .data import Trajectory
from .embedding import EmbeddedTrajectory

LOG_SCALE_CAP = 1.5  # tanh bound on coupling log-scales, keeps |logdet| small


@dataclass(frozen=True)
class ContextEmbedding:
    values: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        if self.is_null and np.any(self.values != 0):
            raise ValueError("null context must be all zeros")


def null_context(context_dim: int) -> ContextEmbedding:
    return ContextEmbedding(values=np.zeros(context_dim), is_null=True)


@dataclass(frozen=True)
class ConditionFeatures:
    radius_km: float
    speed_km_per_slot: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.radius_km) or self.radius_km < 0:
            raise ValueError("radius must be finite and nonnegative")


def condition_features(traj: Trajectory, vocabulary) -> ConditionFeatures:
    """Radius of gyration (and mean per-slot speed) of a trajectory, in km."""
    coords = np.array([[vocabulary[i].x, vocabulary[i].y] for i in traj.locations])
    return ConditionFeatures(
        radius_km=radius_of_gyration(coords),
        speed_km_per_slot=(
            float(np.linalg.norm(np.diff(coords, axis=0), axis=1).mean())
            if len(coords) > 1
            else 0.0
        ),
    )


def radius_of_gyration(coords: np.ndarray) -> float:
    """Root-mean-square distance of points from their centroid."""
    coords = np.asarray(coords, dtype=float)
    centered = coords - coords.mean(axis=0)
    return float(np.sqrt(np.einsum("nd,nd->n", centered, centered).mean()))


class ContextEncoder:
    """LSTM over history embeddings -> context vector p_u."""

    def __init__(self, embed_dim: int, context_dim: int, seed: int = 0):
        self.embed_dim = embed_dim
        self.context_dim = context_dim
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        h = context_dim

        def glorot(name, fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.param(name, rng.uniform(-bound, bound, (fan_in, fan_out)))

        glorot("lstm.wx", embed_dim, 4 * h)
        glorot("lstm.wh", h, 4 * h)
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget-gate bias
        self.params.param("lstm.b", bias)
        glorot("proj.w", h, context_dim)
        self.params.param("proj.b", np.zeros(context_dim))

    def encode_batch_vars(self, sequences: np.ndarray) -> Var:
        """(B, T, D) history embeddings -> (B, C) context, on the graph.

        Gate layout is [input, forget, output | cell-candidate] so the three
        sigmoid gates come out of a single activation per step.
        """
        p = self.params
        B, T, _ = sequences.shape
        hdim = self.context_dim
        x_proj = ad.reshape(
            ad.reshape(Var(sequences), (B * T, self.embed_dim)) @ p["lstm.wx"]
            + p["lstm.b"],
            (B, T, 4 * hdim),
        )
        h = Var(np.zeros((B, hdim)))
        c = Var(np.zeros((B, hdim)))
        for t in range(T):
            pre = x_proj[:, t, :] + h @ p["lstm.wh"]
            gates = ad.sigmoid(pre[:, 0 : 3 * hdim])
            i = gates[:, 0:hdim]
            f = gates[:, hdim : 2 * hdim]
            o = gates[:, 2 * hdim : 3 * hdim]
            g = ad.tanh(pre[:, 3 * hdim : 4 * hdim])
            c = f * c + i * g
            h = o * ad.tanh(c)
        return h @ p["proj.w"] + p["proj.b"]

    def encode_batch(self, sequences: np.ndarray) -> np.ndarray:
        return self.encode_batch_vars(np.asarray(sequences, dtype=float)).data

    def encode_history(
        self, histories, stride: int = 1
    ) -> ContextEmbedding:
        """Encode one user's history trajectories; empty history -> null."""
        seq = history_sequence(histories, stride)
        if seq is None:
            return null_context(self.context_dim)
        return ContextEmbedding(values=self.encode_batch(seq[None])[0], is_null=False)


def history_sequence(histories, stride: int = 1) -> np.ndarray | None:
    """Concatenate history embeddings into one (T, D) sequence, or None if empty."""
    parts = [
        h.values if isinstance(h, EmbeddedTrajectory) else np.asarray(h, dtype=float)
        for h in histories
    ]
    if not parts:
        return None
    seq = np.concatenate(parts, axis=0)
    return seq[::stride] if stride > 1 else seq


@dataclass(frozen=True)
class FlowConfig:
    dim: int = 32
    cond_dim: int = 1
    n_layers: int = 4
    hidden: int = 64
    seed: int = 0


class ConditionalFlow:
    """Affine coupling flow on the context space, conditioned on features r_u.

    Coupling networks start at zero so the untrained flow is the identity;
    log-scales are tanh-bounded so per-layer |log det| stays below
    LOG_SCALE_CAP * dim. Feature values are standardized with the statistics
    stored on the model (set during :meth:`fit`).
    """

    def __init__(self, config: FlowConfig):
        self.config = config
        self.params = ParamStore()
        self.r_mean = 0.0
        self.r_std = 1.0
        rng = np.random.default_rng(config.seed)
        d, cd, hid = config.dim, config.cond_dim, config.hidden
        self.masks = []
        for i in range(config.n_layers):
            b = np.zeros(d)
            if i % 2 == 0:
                b[: d // 2] = 1.0
            else:
                b[d // 2 :] = 1.0
            self.masks.append(b)
            bound = np.sqrt(6.0 / (d + cd + hid))
            self.params.param(f"l{i}.w1", rng.uniform(-bound, bound, (d + cd, hid)))
            self.params.param(f"l{i}.b1", np.zeros(hid))
            self.params.param(f"l{i}.w2", np.zeros((hid, 2 * d)))
            self.params.param(f"l{i}.b2", np.zeros(2 * d))

    def _st(self, masked: Var, r: np.ndarray, i: int) -> tuple[Var, Var]:
        p = self.params
        d = self.config.dim
        free = Var(1.0 - self.masks[i])
        hid = ad.tanh(ad.concat([masked, Var(r)], axis=1) @ p[f"l{i}.w1"] + p[f"l{i}.b1"])
        st = hid @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
        s = ad.tanh(st[:, :d] * (1.0 / LOG_SCALE_CAP)) * LOG_SCALE_CAP * free
        t = st[:, d:] * free
        return s, t

    def _norm_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float).reshape(-1, self.config.cond_dim)
        return (r - self.r_mean) / self.r_std

    def forward_vars(self, z: np.ndarray, r: np.ndarray) -> tuple[Var, Var]:
        """Base draws -> context embeddings; returns (x, log-det of forward map)."""
        x = Var(np.asarray(z, dtype=float))
        logdet = Var(np.zeros(x.shape[0]))
        rn = self._norm_r(r)
        for i in range(self.config.n_layers):
            b = Var(self.masks[i])
            masked = x * b
            s, t = self._st(masked, rn, i)
            x = masked + (x * ad.exp(s) + t) * Var(1.0 - self.masks[i])
            logdet = logdet + ad.vsum(s, axis=1)
        return x, logdet

    def inverse_vars(self, x: np.ndarray, r: np.ndarray) -> tuple[Var, Var]:
        """Context embeddings -> base draws; returns (z, log-det of inverse map)."""
        z = Var(np.asarray(x, dtype=float))
        logdet = Var(np.zeros(z.shape[0]))
        rn = self._norm_r(r)
        for i in reversed(range(self.config.n_layers)):
            b = Var(self.masks[i])
            masked = z * b
            s, t = self._st(masked, rn, i)
            z = masked + ((z - t) * ad.exp(-s)) * Var(1.0 - self.masks[i])
            logdet = logdet - ad.vsum(s, axis=1)
        return z, logdet

    def nll_vars(self, x: np.ndarray, r: np.ndarray) -> Var:
        """Mean negative log-likelihood of samples under the conditional flow."""
        z, logdet = self.inverse_vars(x, r)
        const = 0.5 * self.config.dim * np.log(2 * np.pi)
        logp = ad.vsum(ad.square(z), axis=1) * (-0.5) + logdet - const
        return ad.vmean(logp) * (-1.0)

    def fit(
        self,
        p_u: np.ndarray,
        r_u: np.ndarray,
        steps: int = 400,
        lr: float = 1e-3,
        seed: int = 0,
        jitter: float = 0.01,
    ) -> list[float]:
        """Maximum-likelihood training on harvested (context, feature) pairs."""
        rng = np.random.default_rng(seed)
        p_u = np.asarray(p_u, dtype=float)
        r_raw = np.asarray(r_u, dtype=float).reshape(-1, self.config.cond_dim)
        self.r_mean = float(r_raw.mean())
        self.r_std = float(max(r_raw.std(), 1e-6))
        opt = Adam([self.params], lr=lr)
        losses = []
        for _ in range(steps):
            self.params.zero_grad()
            noisy = p_u + jitter * rng.standard_normal(p_u.shape)
            loss = self.nll_vars(noisy, r_raw)
            ad.backward(loss)
            ad.clip_global_norm([self.params], 10.0)
            opt.step()
            losses.append(loss.item())
        return losses


def flow_forward(flow: ConditionalFlow, z, r_u) -> np.ndarray:
    """Map base draw(s) to context embedding(s) conditioned on r_u."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    x, _ = flow.forward_vars(z[None] if single else z, _tile_r(r_u, 1 if single else len(z), flow))
    return x.data[0] if single else x.data


def flow_inverse(flow: ConditionalFlow, p_u, r_u) -> np.ndarray:
    """Map context embedding(s) back to base draw(s) conditioned on r_u."""
    p_u = np.asarray(p_u, dtype=float)
    single = p_u.ndim == 1
    z, _ = flow.inverse_vars(p_u[None] if single else p_u, _tile_r(r_u, 1 if single else len(p_u), flow))
    return z.data[0] if single else z.data


def _tile_r(r_u, n: int, flow: ConditionalFlow) -> np.ndarray:
    r = np.asarray(r_u, dtype=float).reshape(-1, flow.config.cond_dim)
    if len(r) == 1 and n > 1:
        r = np.repeat(r, n, axis=0)
    return r
