"""Transformer noise predictor and the sinusoidal diffusion-step embedding.

Per-slot inputs (noisy target row, observation row, mask bit) are mixed by a
pointwise projection, shifted by broadcast projections of the step embedding
and the user context, lifted to the model width with added slot positional
encodings, run through a stack of self-attention blocks, and mapped back to
the embedding width. Blocks normalize on the branch (pre-LN) so the residual
stream keeps the input amplitude, and a learned linear skip connects the
noisy target directly to the output head; both are needed for the predictor
to reproduce its own noise input at high diffusion steps, where the target
is almost pure noise. The predicted noise always has the same shape as the
noisy target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Var

STEP_EMBED_DIM = 128


def step_embedding(t) -> np.ndarray:
    """128-dim sinusoidal embedding of diffusion step(s) t.

    Component j is sin(t * 10**(4j/63)) for j < 64 and the matching cosine
    for j >= 64. Accepts a scalar or a 1-D array of steps.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("diffusion step must be >= 0")
    freqs = 10.0 ** (4.0 * np.arange(64) / 63.0)
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def slot_positional_encoding(length: int, dim: int) -> np.ndarray:
    """Standard interleaved sin/cos encoding of slot index, shape (L, dim)."""
    pos = np.arange(length)[:, None]
    div = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: pe[:, 1::2].shape[1]])
    return pe


@dataclass(frozen=True)
class DenoiserConfig:
    embed_dim: int = 32  # D, width of location embeddings
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    conv_channels: int = 32
    context_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        for name in ("embed_dim", "d_model", "layers", "heads", "conv_channels", "context_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def paper_denoiser_config(embed_dim: int = 128, context_dim: int = 128, seed: int = 0) -> DenoiserConfig:
    """Full-scale configuration (4 layers, 8 heads, 64 channels)."""
    return DenoiserConfig(
        embed_dim=embed_dim,
        d_model=128,
        layers=4,
        heads=8,
        conv_channels=64,
        context_dim=context_dim,
        seed=seed,
    )


class DenoiserModel:
    """Noise predictor eps_theta(e_ta_t, e_co, mask, t, p_u)."""

    def __init__(self, config: DenoiserConfig):
        self.config = config
        self.params = ParamStore()
        rng = np.random.default_rng(config.seed)
        c = config

        def glorot(name, fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return self.params.param(name, rng.uniform(-bound, bound, (fan_in, fan_out)))

        def zeros(name, *shape):
            return self.params.param(name, np.zeros(shape))

        in_dim = 2 * c.embed_dim + 1
        glorot("in.w", in_dim, c.conv_channels)
        zeros("in.b", c.conv_channels)
        glorot("tproj.w", STEP_EMBED_DIM, c.conv_channels)
        zeros("tproj.b", c.conv_channels)
        glorot("pproj.w", c.context_dim, c.conv_channels)
        zeros("pproj.b", c.conv_channels)
        glorot("lift.w", c.conv_channels, c.d_model)
        zeros("lift.b", c.d_model)
        for i in range(c.layers):
            glorot(f"block{i}.q.w", c.d_model, c.d_model)
            zeros(f"block{i}.q.b", c.d_model)
            glorot(f"block{i}.k.w", c.d_model, c.d_model)
            zeros(f"block{i}.k.b", c.d_model)
            glorot(f"block{i}.v.w", c.d_model, c.d_model)
            zeros(f"block{i}.v.b", c.d_model)
            glorot(f"block{i}.o.w", c.d_model, c.d_model)
            zeros(f"block{i}.o.b", c.d_model)
            self.params.param(f"block{i}.ln1.g", np.ones(c.d_model))
            zeros(f"block{i}.ln1.b", c.d_model)
            glorot(f"block{i}.ff1.w", c.d_model, 4 * c.d_model)
            zeros(f"block{i}.ff1.b", 4 * c.d_model)
            glorot(f"block{i}.ff2.w", 4 * c.d_model, c.d_model)
            zeros(f"block{i}.ff2.b", c.d_model)
            self.params.param(f"block{i}.ln2.g", np.ones(c.d_model))
            zeros(f"block{i}.ln2.b", c.d_model)
        glorot("head.w", c.d_model, c.embed_dim)
        zeros("head.b", c.embed_dim)
        zeros("skip.w", c.embed_dim, c.embed_dim)

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def null_context(self) -> np.ndarray:
        return np.zeros(self.config.context_dim)

    def forward_vars(
        self,
        e_ta_t: np.ndarray,
        e_co: np.ndarray,
        mask_bits: np.ndarray,
        t: np.ndarray,
        p_u,
        positional: bool = True,
    ) -> Var:
        """Batched forward pass building the autodiff graph.

        e_ta_t, e_co: (B, L, D); mask_bits: (B, L); t: (B,) steps;
        p_u: (B, C) array or Var. Returns a (B, L, D) Var.
        """
        p = self.params
        c = self.config
        B, L, _ = e_ta_t.shape
        x_in = Var(
            np.concatenate(
                [e_ta_t, e_co, np.asarray(mask_bits, dtype=float)[:, :, None]], axis=2
            )
        )
        h = x_in @ p["in.w"] + p["in.b"]
        t_emb = Var(step_embedding(np.asarray(t, dtype=float)))  # (B, 128)
        shift = t_emb @ p["tproj.w"] + p["tproj.b"]
        p_var = p_u if isinstance(p_u, Var) else Var(np.asarray(p_u, dtype=float))
        shift = shift + (p_var @ p["pproj.w"] + p["pproj.b"])
        h = h + ad.reshape(shift, (B, 1, c.conv_channels))
        h = ad.relu(h)
        h = h @ p["lift.w"] + p["lift.b"]
        if positional:
            h = h + Var(slot_positional_encoding(L, c.d_model)[None, :, :])
        for i in range(c.layers):
            h = self._block(h, i, B, L)
        e_ta_var = x_in[:, :, 0 : c.embed_dim]
        return h @ p["head.w"] + p["head.b"] + e_ta_var @ p["skip.w"]

    def _block(self, x: Var, i: int, B: int, L: int) -> Var:
        p = self.params
        c = self.config
        dh = c.d_model // c.heads

        def split_heads(v: Var) -> Var:
            return ad.swapaxes(ad.reshape(v, (B, L, c.heads, dh)), 1, 2)

        normed = ad.layer_norm(x, p[f"block{i}.ln1.g"], p[f"block{i}.ln1.b"])
        q = split_heads(normed @ p[f"block{i}.q.w"] + p[f"block{i}.q.b"])
        k = split_heads(normed @ p[f"block{i}.k.w"] + p[f"block{i}.k.b"])
        v = split_heads(normed @ p[f"block{i}.v.w"] + p[f"block{i}.v.b"])
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        attn = ad.softmax(scores, axis=-1) @ v  # (B, H, L, dh)
        attn = ad.reshape(ad.swapaxes(attn, 1, 2), (B, L, c.d_model))
        x = x + (attn @ p[f"block{i}.o.w"] + p[f"block{i}.o.b"])
        normed = ad.layer_norm(x, p[f"block{i}.ln2.g"], p[f"block{i}.ln2.b"])
        ff = ad.relu(normed @ p[f"block{i}.ff1.w"] + p[f"block{i}.ff1.b"])
        return x + (ff @ p[f"block{i}.ff2.w"] + p[f"block{i}.ff2.b"])

    def predict_batch(
        self, e_ta_t, e_co, mask_bits, t, p_u, positional: bool = True
    ) -> np.ndarray:
        """Batched numpy forward without building a graph."""
        return self.forward_vars(
            np.asarray(e_ta_t, dtype=float),
            np.asarray(e_co, dtype=float),
            mask_bits,
            np.atleast_1d(t),
            np.asarray(p_u, dtype=float),
            positional=positional,
        ).data

    def __call__(self, e_ta_t, e_co, mask_bits, t, p_u) -> np.ndarray:
        return self.predict_noise(e_ta_t, e_co, mask_bits, t, p_u)

    def predict_noise(self, e_ta_t, e_co, mask_bits, t, p_u, positional: bool = True) -> np.ndarray:
        """Single-trajectory prediction: (L, D) inputs -> (L, D) noise estimate."""
        e_ta_t = np.asarray(e_ta_t, dtype=float)
        if e_ta_t.ndim != 2 or e_ta_t.shape[1] != self.config.embed_dim:
            raise ValueError("e_ta_t must be (L, embed_dim)")
        e_co = np.asarray(e_co, dtype=float)
        if e_co.shape != e_ta_t.shape:
            raise ValueError("e_co shape must match e_ta_t")
        bits = np.asarray(mask_bits, dtype=float).reshape(1, -1)
        if bits.shape[1] != e_ta_t.shape[0]:
            raise ValueError("mask length must match trajectory length")
        if p_u is None:
            p_u = self.null_context()
        out = self.predict_batch(
            e_ta_t[None], e_co[None], bits, [int(t)], np.asarray(p_u)[None], positional
        )
        return out[0]


def parameter_gradients(model, loss_closure) -> np.ndarray:
    """Reverse-mode gradient of `loss_closure()` w.r.t. every model parameter.

    `model` may be a DenoiserModel or anything exposing a `params` ParamStore.
    The closure must build its loss through the model's Var-based forward.
    """
    store: ParamStore = model.params
    store.zero_grad()
    loss = loss_closure()
    if not isinstance(loss, Var):
        raise TypeError("loss closure must return an autodiff Var")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss")
    ad.backward(loss)
    return store.grad_flat()
