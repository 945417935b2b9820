"""Command-line entry point: ``smartfarm {run,sweep,pretrain,gen-data,ingest-data,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .config import ConfigError, ExperimentConfig, load_config
from .dataset import generate_dataset, ingest_dataset
from .harness import aggregate_table, emit_results, output_dir, pretrain, run_experiment, sweep_cells


def _common(p: argparse.ArgumentParser, scheme: bool = True) -> None:
    p.add_argument("--config", help="YAML config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--episodes", type=int, help="training episodes per cell")
    p.add_argument("--out", help="output directory (else $SMARTFARM_OUT, else ./results)")
    p.add_argument("--p-a", type=float, dest="p_a", help="sensor attack probability")
    p.add_argument("--p-ae", type=float, dest="p_ae", help="gateway attack probability")
    if scheme:
        p.add_argument("--scheme", help="decision scheme, e.g. DT-PPO")


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    exp, threat = {}, {}
    if getattr(args, "seed", None) is not None:
        exp["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        exp["episodes"] = args.episodes
    if getattr(args, "scheme", None):
        exp["scheme"] = args.scheme
    if getattr(args, "runs", None) is not None:
        exp["runs"] = args.runs
    if getattr(args, "p_a", None) is not None:
        threat["p_a"] = args.p_a
        exp["sweep_p_a"] = (args.p_a,)
    if getattr(args, "p_ae", None) is not None:
        threat["p_ae"] = args.p_ae
        exp["sweep_p_ae"] = (args.p_ae,)
    try:
        return cfg.replace(experiment=exp, threat=threat)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    cfg = _resolve(args)
    cells = run_experiment(cfg, cache_dir=args.cache_dir)
    paths = emit_results(cells, output_dir(args.out), cfg)
    c = cells[0]
    print(f"{c.run_id}: mean accumulated reward {sum(e.accumulated_reward for e in c.episodes) / len(c.episodes):.3f}"
          f" over {len(c.episodes)} episode(s); results in {paths['metrics.csv'].parent}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    if args.schemes:
        cfg = cfg.replace(experiment={"schemes": tuple(args.schemes.split(","))})
    cells = sweep_cells(cfg)
    print(f"running {len(cells)} cell(s)")
    results = run_experiment(cfg, cells, cache_dir=args.cache_dir)
    paths = emit_results(results, output_dir(args.out), cfg)
    print(f"results in {paths['metrics.csv'].parent}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    seed = cfg.experiment.pretrain_seed_offset if args.seed is None else args.seed
    data, wall_ms = pretrain(cfg, args.kind, seed, args.episodes)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"pretrain-{args.kind}-s{seed}.ckpt"
    path.write_bytes(data)
    print(f"wrote {path} ({len(data)} bytes, {wall_ms:.0f} ms)")
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    farm = cfg.farm
    if args.hours is not None:
        farm = dataclasses.replace(farm, duration_s=int(args.hours * 3600))
    table = generate_dataset(farm, cfg.experiment.seed if args.seed is None else args.seed,
                             capacity_j=cfg.energy.capacity_j)
    out = Path(args.out) if args.out else output_dir(None) / "evd.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, lineterminator="\n")
    print(f"wrote {len(table)} rows to {out}")
    return 0


def cmd_ingest(args) -> int:
    dists = ingest_dataset(pd.read_csv(args.path))
    payload = {str(k): dataclasses.asdict(v) for k, v in dists.items()}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(args.out)
    metrics = pd.read_csv(out / "metrics.csv", keep_default_na=False, dtype={"wall_ms": str})
    table = aggregate_table(metrics, cfg.metrics.aggregate_episodes, cfg.metrics.return_gamma)
    table.to_csv(out / "aggregate.csv", index=False, lineterminator="\n")
    print(table.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartfarm", description="Smart-farm sensor network experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one (scheme, p_a, p_ae, seed) cell")
    _common(p)
    p.add_argument("--cache-dir", help="directory for cached pretraining checkpoints")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the configured scheme x p_a x p_ae x seed grid")
    _common(p, scheme=False)
    p.add_argument("--schemes", help="comma-separated scheme list (overrides the config)")
    p.add_argument("--runs", type=int, help="seeds per cell")
    p.add_argument("--cache-dir", help="directory for cached pretraining checkpoints")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pretrain", help="produce a transfer-learning checkpoint")
    _common(p, scheme=False)
    p.add_argument("--kind", choices=("FT", "PT"), default="FT")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("gen-data", help="write a synthetic EVD-layout CSV")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--hours", type=float, help="duration (defaults to the farm's episode length)")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest-data", help="per-animal vital distributions of an EVD CSV")
    p.add_argument("path")
    p.add_argument("--out", help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("report", help="recompute aggregate tables from metrics.csv")
    p.add_argument("--config")
    p.add_argument("--out", help="results directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
