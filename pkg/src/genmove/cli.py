"""Command-line entry points: synth, embed, train, run, baseline, sweep, report."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import load_embedding, load_model, save_embedding
from .config import TASKS, TaskSpec, load_config
from .data import EprParams, load_dataset, save_dataset, synthesize_epr
from .embedding import build_spatial_graph, train_embeddings
from .harness import run_baseline, run_task, sweep_mask_ratio, train


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genmove")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--grid", type=int, required=True)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--slots-per-day", type=int, default=48)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--gamma", type=float, default=0.6)
    p.add_argument("--home-bias", type=float, default=0.85)

    p = sub.add_parser("embed", help="train location embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--k-nearest", type=int, default=8)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the diffusion model")
    _add_config_args(p)
    p.add_argument("--data", default=None)
    p.add_argument("--embedding", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("run", help="run one task on the held-out split")
    _add_config_args(p)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--data", default=None)
    p.add_argument("--embedding", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--horizon", type=int, default=8)
    p.add_argument("--missing-ratio", type=float, default=0.2)
    p.add_argument("--radius-target", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--context", choices=("null", "flow"), default="null")

    p = sub.add_parser("baseline", help="run a trivial baseline")
    _add_config_args(p)
    p.add_argument(
        "--name",
        required=True,
        choices=("uniform-random-gen", "linear-interp", "persistence", "markov1"),
    )
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--horizon", type=int, default=8)
    p.add_argument("--missing-ratio", type=float, default=0.2)
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("sweep", help="sweep mask-mixture weights")
    _add_config_args(p)
    p.add_argument("--data", default=None)
    p.add_argument("--embedding", default=None)
    p.add_argument("--out", default=None)
    p.add_argument(
        "--point",
        dest="points",
        action="append",
        required=True,
        metavar="W1,W2,W3,W4,W5",
        help="one mixture grid point (repeatable)",
    )

    p = sub.add_parser("report", help="print metrics from report.json files")
    p.add_argument("paths", nargs="+", help="report.json files or run directories")
    return parser


def _path(cli_value, config_value, flag: str) -> str:
    value = cli_value or config_value
    if not value:
        raise SystemExit(f"missing {flag} (flag or config key)")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "synth":
        params = EprParams(
            rho=args.rho,
            gamma=args.gamma,
            n_users=args.users,
            days=args.days,
            grid_side=args.grid,
            home_bias=args.home_bias,
            seed=args.seed,
            slots_per_day=args.slots_per_day,
        )
        dataset = synthesize_epr(params)
        save_dataset(dataset, args.out)
        print(
            f"wrote {args.out}: {len(dataset.trajectories)} current trajectories, "
            f"{len(dataset.vocabulary)} locations"
        )
        return 0

    if args.command == "embed":
        dataset = load_dataset(args.data)
        graph = build_spatial_graph(dataset.vocabulary, args.k_nearest)
        table = train_embeddings(
            graph, args.dim, args.epochs, args.negatives, args.lr, args.seed
        )
        save_embedding(table, args.out)
        print(f"wrote {args.out}: {table.vectors.shape[0]} x {table.dim}")
        return 0

    if args.command == "report":
        for path in args.paths:
            if os.path.isdir(path):
                path = os.path.join(path, "report.json")
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            meta = payload.get("metadata", {})
            title = meta.get("baseline") or meta.get("task", path)
            print(f"{path} [{title}]")
            for key, value in payload.get("metrics", {}).items():
                print(f"  {key:>16}: {value:.6g}")
        return 0

    config = load_config(args.config, args.overrides)

    if args.command == "train":
        dataset = load_dataset(_path(args.data, config.data_path, "--data"))
        table = load_embedding(_path(args.embedding, config.embedding_path, "--embedding"))
        out = _path(args.out, config.out_dir, "--out")
        result = train(
            config,
            dataset,
            table,
            out,
            progress=lambda e, v: print(f"epoch {e}: loss {v:.5f}", file=sys.stderr),
        )
        print(f"wrote {result.checkpoint_path}")
        return 0

    if args.command == "run":
        dataset = load_dataset(_path(args.data, config.data_path, "--data"))
        table = load_embedding(_path(args.embedding, config.embedding_path, "--embedding"))
        models = load_model(_path(args.ckpt, config.checkpoint_path, "--ckpt"))
        spec = TaskSpec(
            task=args.task,
            horizon=args.horizon,
            missing_ratio=args.missing_ratio,
            radius_target=args.radius_target,
            sample_count=args.samples,
            omega=args.omega,
            generation_context=args.context,
        )
        report = run_task(spec, models, dataset, table, config, args.out or config.out_dir or None)
        for key, value in sorted(report.values.items()):
            print(f"{key}: {value:.6g}")
        return 0

    if args.command == "baseline":
        dataset = load_dataset(_path(args.data, config.data_path, "--data"))
        spec = TaskSpec(
            task=args.task,
            horizon=args.horizon,
            missing_ratio=args.missing_ratio,
            sample_count=args.samples,
        )
        report = run_baseline(
            args.name, dataset, spec, config, args.out or config.out_dir or None
        )
        for key, value in sorted(report.values.items()):
            print(f"{key}: {value:.6g}")
        return 0

    if args.command == "sweep":
        dataset = load_dataset(_path(args.data, config.data_path, "--data"))
        table = load_embedding(_path(args.embedding, config.embedding_path, "--embedding"))
        grid = [tuple(float(w) for w in point.split(",")) for point in args.points]
        rows = sweep_mask_ratio(
            config, dataset, table, grid, args.out or config.out_dir or None
        )
        for row in rows:
            print(json.dumps(row))
        return 0

    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
