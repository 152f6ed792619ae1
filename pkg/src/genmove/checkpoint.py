"""Binary checkpoint containers.

Embedding tables use the "GMEM" format: magic, u32 version, u32 V, u32 D,
then V*D little-endian float32 values in row-major order. Model checkpoints
use the "GMNP" container: magic, u32 version, u32 section count, then per
section a 4-byte tag, a length-prefixed JSON config blob, a u64 parameter
count and the parameters as little-endian float32 in registry order.
Sections: DENO (noise predictor), CTXT (history encoder), FLOW (conditional
controller).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .context import ConditionalFlow, ContextEncoder, FlowConfig
from .denoiser import DenoiserConfig, DenoiserModel
from .embedding import EmbeddingTable

EMBED_MAGIC = b"GMEM"
MODEL_MAGIC = b"GMNP"
VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed."""


def save_embedding(table: EmbeddingTable, path) -> None:
    v, d = table.vectors.shape
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<III", VERSION, v, d))
        fh.write(table.vectors.astype("<f4").tobytes())


def load_embedding(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBED_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {EMBED_MAGIC!r}")
        version, v, d = struct.unpack("<III", fh.read(12))
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        raw = fh.read(v * d * 4)
        if len(raw) != v * d * 4:
            raise CheckpointError("truncated embedding payload")
        vectors = np.frombuffer(raw, dtype="<f4").astype(float).reshape(v, d)
    return EmbeddingTable(dim=d, vectors=vectors)


def _write_section(fh, tag: bytes, config: dict, flat: np.ndarray) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    fh.write(tag)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<Q", flat.size))
    fh.write(flat.astype("<f4").tobytes())


def _read_section(fh) -> tuple[bytes, dict, np.ndarray]:
    tag = fh.read(4)
    if len(tag) != 4:
        raise CheckpointError("truncated section tag")
    (blob_len,) = struct.unpack("<I", fh.read(4))
    config = json.loads(fh.read(blob_len).decode("utf-8"))
    (count,) = struct.unpack("<Q", fh.read(8))
    raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise CheckpointError("truncated parameter payload")
    return tag, config, np.frombuffer(raw, dtype="<f4").astype(float)


def save_model(
    path,
    denoiser: DenoiserModel,
    encoder: ContextEncoder | None = None,
    flow: ConditionalFlow | None = None,
) -> None:
    sections = [(b"DENO", asdict(denoiser.config), denoiser.params.flat())]
    if encoder is not None:
        cfg = {
            "embed_dim": encoder.embed_dim,
            "context_dim": encoder.context_dim,
        }
        sections.append((b"CTXT", cfg, encoder.params.flat()))
    if flow is not None:
        cfg = asdict(flow.config)
        cfg["r_mean"] = flow.r_mean
        cfg["r_std"] = flow.r_std
        sections.append((b"FLOW", cfg, flow.params.flat()))
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", VERSION, len(sections)))
        for tag, cfg, flat in sections:
            _write_section(fh, tag, cfg, flat)


def load_model(path) -> dict:
    """Load a GMNP container; returns {"denoiser": ..., "encoder": ..., "flow": ...}."""
    out: dict = {"denoiser": None, "encoder": None, "flow": None}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        version, n_sections = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        for _ in range(n_sections):
            tag, cfg, flat = _read_section(fh)
            if tag == b"DENO":
                model = DenoiserModel(DenoiserConfig(**cfg))
                model.params.set_flat(flat)
                out["denoiser"] = model
            elif tag == b"CTXT":
                enc = ContextEncoder(**cfg)
                enc.params.set_flat(flat)
                out["encoder"] = enc
            elif tag == b"FLOW":
                r_mean = cfg.pop("r_mean", 0.0)
                r_std = cfg.pop("r_std", 1.0)
                flow = ConditionalFlow(FlowConfig(**cfg))
                flow.params.set_flat(flat)
                flow.r_mean = r_mean
                flow.r_std = r_std
                out["flow"] = flow
            else:
                raise CheckpointError(f"unknown section tag {tag!r}")
    return out
