"""Experiment orchestration: training, task runners, baselines, sweeps.

Datasets are split by user (70/10/20, seeded) inside `train` and the task
runners, so a config seed pins the whole pipeline: the same seed always
produces the same split, the same mask draws, the same training batches and
the same evaluation reports (up to the timestamp field).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Var, clip_global_norm
from .baselines import (
    MarkovModel,
    linear_interp_rankings,
    persistence_ranking,
    uniform_random_trajectories,
)
from .checkpoint import save_model
from .config import ExperimentConfig, TaskSpec
from .context import (
    ConditionalFlow,
    ContextEncoder,
    FlowConfig,
    flow_forward,
    history_sequence,
    radius_of_gyration,
)
from .data import Dataset, Trajectory, split_by_user
from .denoiser import DenoiserConfig, DenoiserModel
from .diffusion import (
    GuidanceConfig,
    make_schedule,
    sample_batch,
    training_loss_graph,
)
from .embedding import EmbeddingTable, decode_batch, embed
from .masks import (
    Mask,
    MaskMixture,
    apply_mask,
    complete_mask,
    random_mask,
    sample_mask,
    sample_strategy,
    terminal_mask,
)
from .metrics import EvalReport, accuracy_at_k, compare_mobility, recovery_scores

# salts for per-purpose RNG streams derived from the config seed
_SALTS = {
    "train": 11,
    "recover-mask": 21,
    "recover-sample": 22,
    "predict-sample": 23,
    "sparse-mask": 24,
    "generate-sample": 25,
    "controlled-sample": 26,
    "baseline": 27,
}


def _rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SALTS[label]]))


@dataclass
class TrainResult:
    denoiser: DenoiserModel
    encoder: ContextEncoder
    flow: ConditionalFlow
    losses: list[tuple[int, int, float]]
    checkpoint_path: str | None = None
    epoch_paths: tuple[str, ...] = ()

    def as_models(self) -> dict:
        return {"denoiser": self.denoiser, "encoder": self.encoder, "flow": self.flow}

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for epoch, _, loss in self.losses:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def _embedded_histories(dataset: Dataset, table: EmbeddingTable, stride: int) -> dict:
    """user -> (T, D) concatenated, strided history embedding (None if empty)."""
    out = {}
    for user in dataset.users():
        hists = dataset.histories.get(user, ())
        out[user] = history_sequence([embed(h, table) for h in hists], stride)
    return out


def _context_matrix(encoder: ContextEncoder, users, hist_seqs: dict) -> np.ndarray:
    """Encode each user's history into a (N, C) matrix; zeros when empty."""
    out = np.zeros((len(users), encoder.context_dim))
    by_len: dict[int, list[int]] = {}
    for i, user in enumerate(users):
        seq = hist_seqs.get(user)
        if seq is not None:
            by_len.setdefault(len(seq), []).append(i)
    for length, idxs in sorted(by_len.items()):
        stacked = np.stack([hist_seqs[users[i]] for i in idxs])
        out[idxs] = encoder.encode_batch(stacked)
    return out


def _history_radius(dataset: Dataset, user: int, coords: np.ndarray) -> float:
    pts = [coords[list(t.locations)] for t in dataset.histories.get(user, ())]
    if not pts:
        return 0.0
    return radius_of_gyration(np.concatenate(pts))


def train(
    config: ExperimentConfig,
    dataset: Dataset,
    embedding: EmbeddingTable,
    out_dir: str | None = None,
    progress=None,
) -> TrainResult:
    """Train the denoiser and history encoder jointly, then fit the flow.

    Splits the dataset by user, iterates masked-diffusion batches with
    adaptive-moment SGD, checkpoints every epoch, and logs the per-batch loss
    to loss.csv under `out_dir`. The conditional controller is fitted
    afterwards on (radius, context) pairs harvested from the trained encoder.
    """
    train_ds, _, _ = split_by_user(dataset, seed=config.seed)
    trajs = train_ds.trajectories
    if not trajs:
        raise ValueError("training split is empty")
    spd = train_ds.slots_per_day
    length = len(trajs[0])
    coords = train_ds.coordinates()

    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    guidance = GuidanceConfig(omega=config.omega, lambda_uncond=config.lambda_uncond)
    mixture = MaskMixture(
        weights=tuple(config.mask_weights),
        random_ratio=config.random_ratio,
        sequential_ratio=config.sequential_ratio,
        terminal_horizon=config.terminal_horizon,
    )
    model = DenoiserModel(
        DenoiserConfig(
            embed_dim=embedding.dim,
            d_model=config.d_model,
            layers=config.layers,
            heads=config.heads,
            conv_channels=config.conv_channels,
            context_dim=config.context_dim,
            seed=config.seed,
        )
    )
    encoder = ContextEncoder(embedding.dim, config.context_dim, seed=config.seed + 1)

    e_all = [embed(t, embedding).values for t in trajs]
    hist_seqs = _embedded_histories(train_ds, embedding, config.history_stride)

    rng = _rng(config.seed, "train")
    opt = Adam([model.params, encoder.params], lr=config.lr)
    losses: list[tuple[int, int, float]] = []
    epoch_paths: list[str] = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(config.epochs):
        order = rng.permutation(len(trajs))
        for step, lo in enumerate(range(0, len(order), config.batch_size)):
            chunk = list(order[lo : lo + config.batch_size])
            # group items so users sharing a history length can be encoded
            # in one batched LSTM pass (no-history items go last)
            chunk.sort(
                key=lambda i: (
                    hist_seqs[trajs[i].user_id] is None,
                    -1
                    if hist_seqs[trajs[i].user_id] is None
                    else len(hist_seqs[trajs[i].user_id]),
                )
            )
            items = []
            for i in chunk:
                strategy = sample_strategy(mixture, rng)
                mask = sample_mask(strategy, length, spd, trajs[i].start_slot, mixture, rng)
                pair = apply_mask(e_all[i], mask)
                items.append((pair.e_ta0, pair.e_co, mask, np.zeros(config.context_dim)))
            p_var = _batched_context_vars(encoder, [trajs[i].user_id for i in chunk], hist_seqs)
            model.params.zero_grad()
            encoder.params.zero_grad()
            loss = training_loss_graph(items, model, schedule, guidance, rng, p_u_vars=p_var)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch} step {step}: {value}"
                )
            ad.backward(loss)
            clip_global_norm([model.params, encoder.params], config.grad_clip)
            opt.step()
            losses.append((epoch, step, value))
        if progress is not None:
            progress(epoch, float(np.mean([v for e, _, v in losses if e == epoch])))
        if out_dir:
            path = os.path.join(out_dir, f"ckpt_epoch{epoch:03d}.bin")
            save_model(path, model, encoder)
            epoch_paths.append(path)

    flow = _fit_flow(config, train_ds, encoder, hist_seqs, coords)

    final_path = None
    if out_dir:
        final_path = os.path.join(out_dir, "ckpt_final.bin")
        save_model(final_path, model, encoder, flow)
        with open(os.path.join(out_dir, "loss.csv"), "w", encoding="utf-8") as fh:
            fh.write("epoch,step,loss\n")
            for epoch, step, value in losses:
                fh.write(f"{epoch},{step},{value:.17g}\n")
    return TrainResult(
        denoiser=model,
        encoder=encoder,
        flow=flow,
        losses=losses,
        checkpoint_path=final_path,
        epoch_paths=tuple(epoch_paths),
    )


def _batched_context_vars(encoder: ContextEncoder, users, hist_seqs: dict) -> Var:
    """(B, C) context Var for a batch already grouped by history length."""
    parts: list[Var] = []
    i = 0
    while i < len(users):
        seq = hist_seqs.get(users[i])
        if seq is None:
            j = i
            while j < len(users) and hist_seqs.get(users[j]) is None:
                j += 1
            parts.append(Var(np.zeros((j - i, encoder.context_dim))))
        else:
            j = i
            while (
                j < len(users)
                and hist_seqs.get(users[j]) is not None
                and len(hist_seqs[users[j]]) == len(seq)
            ):
                j += 1
            stacked = np.stack([hist_seqs[users[k]] for k in range(i, j)])
            parts.append(encoder.encode_batch_vars(stacked))
        i = j
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)


def _fit_flow(
    config: ExperimentConfig,
    train_ds: Dataset,
    encoder: ContextEncoder,
    hist_seqs: dict,
    coords: np.ndarray,
) -> ConditionalFlow:
    flow = ConditionalFlow(
        FlowConfig(
            dim=config.context_dim,
            n_layers=config.flow_layers,
            hidden=config.flow_hidden,
            seed=config.seed + 2,
        )
    )
    users = [u for u in train_ds.users() if hist_seqs.get(u) is not None]
    if users:
        p_mat = _context_matrix(encoder, users, hist_seqs)
        r = np.array([_history_radius(train_ds, u, coords) for u in users])
        flow.fit(
            p_mat, r, steps=config.flow_steps, lr=config.flow_lr, seed=config.seed + 3
        )
    return flow


# -- evaluation ----------------------------------------------------------------


def _default_omega(task: str, config: ExperimentConfig) -> float:
    return 0.0 if task == "generate" else config.omega


def _decoded_trajectories(e0: np.ndarray, table: EmbeddingTable, start_slot: int) -> list[Trajectory]:
    n, length, _ = e0.shape
    flat = decode_batch(e0.reshape(n * length, -1), table, 1).reshape(n, length)
    return [
        Trajectory(
            user_id=-(i + 1),
            start_slot=start_slot,
            locations=tuple(int(v) for v in flat[i]),
        )
        for i in range(n)
    ]


def run_task(
    spec: TaskSpec,
    models: dict,
    dataset: Dataset,
    embedding: EmbeddingTable,
    config: ExperimentConfig,
    out_dir: str | None = None,
) -> EvalReport:
    """Evaluate one task on the held-out user split; writes report + CSVs."""
    model: DenoiserModel = models["denoiser"]
    encoder: ContextEncoder = models["encoder"]
    flow: ConditionalFlow | None = models.get("flow")
    _, _, test_ds = split_by_user(dataset, seed=config.seed)
    trajs = test_ds.trajectories
    if not trajs:
        raise ValueError("test split is empty")
    spd = test_ds.slots_per_day
    length = len(trajs[0])
    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    omega = spec.omega if spec.omega is not None else _default_omega(spec.task, config)
    k = config.decode_k

    metadata = {
        "task": spec.task,
        "seed": config.seed,
        "config_hash": config.hash(),
        "omega": omega,
        "n_test_users": len(trajs),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }

    if spec.task in ("generate", "generate-controlled"):
        n = spec.sample_count if spec.sample_count is not None else len(trajs)
        if n == 0:
            return EvalReport(values={}, metadata=metadata)
        label = "generate-sample" if spec.task == "generate" else "controlled-sample"
        rng = _rng(config.seed, label)
        p_u = np.zeros((n, config.context_dim))
        if spec.task == "generate-controlled" or spec.generation_context == "flow":
            if flow is None:
                raise ValueError("task requires a trained conditional flow")
            z = rng.standard_normal((n, config.context_dim))
            if spec.task == "generate-controlled":
                r = np.full(n, float(spec.radius_target))
            else:
                r = np.maximum(flow.r_mean + flow.r_std * rng.standard_normal(n), 0.0)
            p_u = flow_forward(flow, z, r)
        bits = np.stack([complete_mask(length).bits for _ in range(n)]).astype(float)
        e_co = np.zeros((n, length, embedding.dim))
        e0 = sample_batch(model, e_co, bits, p_u, schedule, omega, rng)
        generated = _decoded_trajectories(e0, embedding, start_slot=0)
        jsds, hists = compare_mobility(trajs, generated, test_ds.vocabulary, spd)
        values = {f"jsd_{name}": v for name, v in jsds.items()}
        if spec.task == "generate-controlled":
            coords = test_ds.coordinates()
            radii = [radius_of_gyration(coords[list(t.locations)]) for t in generated]
            values["median_radius_km"] = float(np.median(radii))
            values["mean_radius_km"] = float(np.mean(radii))
        report = EvalReport(values=values, metadata=metadata)
        if out_dir:
            _write_report(report, out_dir)
            _write_histograms(hists, out_dir)
        return report

    # conditioned tasks share the per-user context of the held-out users
    hist_seqs = _embedded_histories(test_ds, embedding, config.history_stride)
    users = [t.user_id for t in trajs]
    p_u = _context_matrix(encoder, users, hist_seqs)
    e_all = np.stack([embed(t, embedding).values for t in trajs])

    if spec.task == "recover":
        mask_rng = _rng(config.seed, "recover-mask")
        masks = [random_mask(length, spec.missing_ratio, mask_rng) for _ in trajs]
        sample_rng = _rng(config.seed, "recover-sample")
    elif spec.task == "predict-sparse":
        mask_rng = _rng(config.seed, "sparse-mask")
        masks = []
        for _ in trajs:
            bits = terminal_mask(length, 1).bits.copy()
            n_drop = int(np.floor(spec.missing_ratio * (length - 1)))
            if n_drop:
                bits[mask_rng.choice(length - 1, size=n_drop, replace=False)] = 0
            masks.append(Mask(bits=bits))
        sample_rng = _rng(config.seed, "predict-sample")
    else:  # predict-next / predict-long
        horizon = 1 if spec.task == "predict-next" else spec.horizon
        masks = [terminal_mask(length, horizon) for _ in trajs]
        sample_rng = _rng(config.seed, "predict-sample")

    bits = np.stack([m.bits for m in masks]).astype(float)
    e_co = e_all * bits[:, :, None]
    e0 = sample_batch(model, e_co, bits, p_u, schedule, omega, sample_rng)

    rankings, truths = [], []
    for i, traj in enumerate(trajs):
        if spec.task == "predict-sparse":
            slots = [length - 1]
        else:
            slots = list(np.flatnonzero(bits[i] == 0))
        decoded = decode_batch(e0[i][slots], embedding, k)
        for row, slot in zip(decoded, slots):
            rankings.append([int(v) for v in row])
            truths.append(traj.locations[slot])

    if spec.task == "recover":
        scores = recovery_scores(rankings, truths, test_ds.vocabulary, k=1)
        values = {
            "recall": scores.recall,
            "map": scores.map,
            "distance_m": scores.distance_m,
            "n_slots": float(len(truths)),
        }
    else:
        values = {
            "acc_at_1": accuracy_at_k(rankings, truths, 1),
            "acc_at_3": accuracy_at_k(rankings, truths, 3),
            "acc_at_5": accuracy_at_k(rankings, truths, 5),
            "n_queries": float(len(truths)),
        }
    report = EvalReport(values=values, metadata=metadata)
    if out_dir:
        _write_report(report, out_dir)
    return report


def run_baseline(
    name: str,
    dataset: Dataset,
    spec: TaskSpec,
    config: ExperimentConfig,
    out_dir: str | None = None,
) -> EvalReport:
    """Evaluate a trivial baseline with the same splits/masks as run_task."""
    train_ds, _, test_ds = split_by_user(dataset, seed=config.seed)
    trajs = test_ds.trajectories
    spd = test_ds.slots_per_day
    length = len(trajs[0])
    coords = test_ds.coordinates()
    metadata = {
        "task": spec.task,
        "baseline": name,
        "seed": config.seed,
        "config_hash": config.hash(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    k = config.decode_k

    if name == "uniform-random-gen":
        if spec.task != "generate":
            raise ValueError("uniform-random-gen only supports the generate task")
        n = spec.sample_count if spec.sample_count is not None else len(trajs)
        rng = _rng(config.seed, "baseline")
        generated = uniform_random_trajectories(n, length, len(test_ds.vocabulary), rng)
        jsds, _ = compare_mobility(trajs, generated, test_ds.vocabulary, spd)
        values = {f"jsd_{s}": v for s, v in jsds.items()}
    elif name == "linear-interp":
        if spec.task != "recover":
            raise ValueError("linear-interp only supports the recover task")
        mask_rng = _rng(config.seed, "recover-mask")
        rankings, truths = [], []
        for traj in trajs:
            mask = random_mask(length, spec.missing_ratio, mask_rng)
            rows = linear_interp_rankings(traj.locations, mask, coords, k)
            for row, slot in zip(rows, np.flatnonzero(mask.bits == 0)):
                rankings.append(row)
                truths.append(traj.locations[slot])
        scores = recovery_scores(rankings, truths, test_ds.vocabulary, k=1)
        values = {
            "recall": scores.recall,
            "map": scores.map,
            "distance_m": scores.distance_m,
            "n_slots": float(len(truths)),
        }
    elif name in ("persistence", "markov1"):
        if spec.task not in ("predict-next", "predict-long", "predict-sparse"):
            raise ValueError(f"{name} only supports prediction tasks")
        horizon = 1 if spec.task in ("predict-next", "predict-sparse") else spec.horizon
        markov = MarkovModel(len(test_ds.vocabulary)).fit(train_ds) if name == "markov1" else None
        rankings, truths = [], []
        for traj in trajs:
            n_obs = length - horizon
            if name == "persistence":
                per_step = [persistence_ranking(traj.locations, n_obs)] * horizon
            else:
                per_step = markov.rank_rollout(traj.locations[n_obs - 1], horizon, k)
            for h in range(horizon):
                rankings.append(per_step[h])
                truths.append(traj.locations[n_obs + h])
        values = {
            "acc_at_1": accuracy_at_k(rankings, truths, 1),
            "acc_at_3": accuracy_at_k(rankings, truths, 3),
            "acc_at_5": accuracy_at_k(rankings, truths, 5),
            "n_queries": float(len(truths)),
        }
    else:
        raise ValueError(f"unknown baseline {name!r}")

    report = EvalReport(values=values, metadata=metadata)
    if out_dir:
        _write_report(report, out_dir)
    return report


def sweep_mask_ratio(
    config: ExperimentConfig,
    dataset: Dataset,
    embedding: EmbeddingTable,
    grid,
    out_dir: str | None = None,
) -> list[dict]:
    """Train one model per mixture-weight grid point; evaluate recover and
    next-location prediction; returns (and optionally writes) the rows."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    rows = []
    for weights in grid:
        cfg = dataclasses.replace(config, mask_weights=tuple(weights))
        result = train(cfg, dataset, embedding)
        models = result.as_models()
        rec = run_task(TaskSpec(task="recover"), models, dataset, embedding, cfg)
        pred = run_task(TaskSpec(task="predict-next"), models, dataset, embedding, cfg)
        row = {f"w_{name}": w for name, w in zip(
            ("random", "terminal", "complete", "sequential", "circadian"), weights
        )}
        row.update({k: v for k, v in rec.values.items() if k != "n_slots"})
        row.update({k: v for k, v in pred.values.items() if k != "n_queries"})
        rows.append(row)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "sweep.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(rows[0]) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row.values()) + "\n")
    return rows


def _write_report(report: EvalReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_histograms(hists: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, (real, gen) in hists.items():
        for label, hist in (("real", real), ("generated", gen)):
            path = os.path.join(out_dir, f"hist_{name}_{label}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("bin_left,bin_right,mass\n")
                for left, right, mass in zip(hist.edges[:-1], hist.edges[1:], hist.mass):
                    fh.write(f"{left:.17g},{right:.17g},{mass:.17g}\n")
