from __future__ import annotations

import struct

import numpy as np
import pytest

from genmove.checkpoint import (
    CheckpointError,
    load_embedding,
    load_model,
    save_embedding,
    save_model,
)
from genmove.context import ConditionalFlow, ContextEncoder, FlowConfig
from genmove.denoiser import DenoiserConfig, DenoiserModel
from genmove.embedding import EmbeddingTable


def test_embedding_roundtrip(tmp_path, rng):
    table = EmbeddingTable(dim=4, vectors=rng.standard_normal((7, 4)).astype(np.float32).astype(float))
    path = tmp_path / "emb.bin"
    save_embedding(table, path)
    loaded = load_embedding(path)
    assert loaded.dim == 4
    np.testing.assert_array_equal(loaded.vectors, table.vectors)


def test_embedding_header_layout(tmp_path, rng):
    table = EmbeddingTable(dim=3, vectors=rng.standard_normal((2, 3)))
    path = tmp_path / "emb.bin"
    save_embedding(table, path)
    raw = path.read_bytes()
    assert raw[:4] == b"GMEM"
    version, v, d = struct.unpack("<III", raw[4:16])
    assert (version, v, d) == (1, 2, 3)
    assert len(raw) == 16 + 2 * 3 * 4


def test_embedding_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_embedding(path)


def test_embedding_truncated(tmp_path, rng):
    table = EmbeddingTable(dim=3, vectors=rng.standard_normal((2, 3)))
    path = tmp_path / "emb.bin"
    save_embedding(table, path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_embedding(path)


def test_model_container_roundtrip(tmp_path, rng):
    cfg = DenoiserConfig(embed_dim=4, d_model=8, layers=1, heads=2, conv_channels=4, context_dim=3)
    model = DenoiserModel(cfg)
    encoder = ContextEncoder(embed_dim=4, context_dim=3, seed=2)
    flow = ConditionalFlow(FlowConfig(dim=3, hidden=8, seed=3))
    flow.params.set_flat(rng.standard_normal(flow.params.n_params) * 0.1)
    flow.r_mean, flow.r_std = 2.5, 1.25

    path = tmp_path / "model.bin"
    save_model(path, model, encoder, flow)
    assert path.read_bytes()[:4] == b"GMNP"
    loaded = load_model(path)

    assert loaded["denoiser"].config == cfg
    f32 = lambda x: x.astype("<f4").astype(float)
    np.testing.assert_array_equal(loaded["denoiser"].params.flat(), f32(model.params.flat()))
    np.testing.assert_array_equal(loaded["encoder"].params.flat(), f32(encoder.params.flat()))
    np.testing.assert_array_equal(loaded["flow"].params.flat(), f32(flow.params.flat()))
    assert loaded["flow"].r_mean == 2.5
    assert loaded["flow"].r_std == 1.25


def test_model_container_without_flow(tmp_path):
    cfg = DenoiserConfig(embed_dim=4, d_model=8, layers=1, heads=2, conv_channels=4, context_dim=3)
    path = tmp_path / "model.bin"
    save_model(path, DenoiserModel(cfg), ContextEncoder(4, 3))
    loaded = load_model(path)
    assert loaded["flow"] is None
    assert loaded["encoder"] is not None


def test_model_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_model(path)
