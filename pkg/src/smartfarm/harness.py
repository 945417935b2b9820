"""Experiment orchestration: training cells, transfer-learning pretraining and result files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .agents import NN_SCHEMES, PpoAgent, make_agents
from .config import ExperimentConfig, config_hash, to_plain
from .metrics import CSV_COLUMNS, MetricRow, accumulated_return, runtime_stats
from .neural import read_checkpoint
from .sim import FarmEnv
from .threat import AttackEvent, ThreatConfig

log = logging.getLogger(__name__)

OUT_ENV = "SMARTFARM_OUT"


def output_dir(out: str | Path | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or "results")


@dataclass
class EpisodeStats:
    episode: int
    steps: int
    accumulated_reward: float
    mean_mq: float
    mean_re: float
    wall_ms: float


@dataclass
class CellResult:
    run_id: str
    scheme: str
    p_a: float
    p_ae: float
    seed: int
    rows: list[MetricRow] = field(default_factory=list)
    episodes: list[EpisodeStats] = field(default_factory=list)
    attacks: list[AttackEvent] = field(default_factory=list)
    pretrain_ms: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.scheme, self.p_a, self.p_ae, self.seed)

    @property
    def total_ms(self) -> float:
        return sum(e.wall_ms for e in self.episodes) + self.pretrain_ms

    def summary(self, n_runtime: int = 50) -> dict:
        return {
            "run_id": self.run_id,
            "scheme": self.scheme,
            "p_a": self.p_a,
            "p_ae": self.p_ae,
            "seed": self.seed,
            "episodes": len(self.episodes),
            "accumulated_reward": [e.accumulated_reward for e in self.episodes],
            "mean_mq": float(np.mean([e.mean_mq for e in self.episodes])),
            "mean_re": float(np.mean([e.mean_re for e in self.episodes])),
            "episode_ms": [round(e.wall_ms, 3) for e in self.episodes],
            "pretrain_ms": round(self.pretrain_ms, 3),
            "runtime_ms_per_episode": runtime_stats([e.wall_ms for e in self.episodes], n_runtime, self.pretrain_ms),
            "total_ms": round(self.total_ms, 3),
        }


def make_run_id(scheme: str, p_a: float, p_ae: float, seed: int) -> str:
    return f"{scheme}|pa={p_a:g}|pae={p_ae:g}|seed={seed}"


def build_env(cfg: ExperimentConfig, p_a: float | None = None, p_ae: float | None = None,
              farm=None, vital_params=None) -> FarmEnv:
    threat = dataclasses.replace(
        cfg.threat,
        p_a=cfg.threat.p_a if p_a is None else p_a,
        p_ae=cfg.threat.p_ae if p_ae is None else p_ae,
    )
    return FarmEnv(farm or cfg.farm, cfg.energy, threat, cfg.fusion, cfg.agents.tau, cfg.agents.initial_rho,
                   cfg.agents.dt.history_window, vital_params=vital_params)


def run_episode(env: FarmEnv, agents: Sequence, rng: np.random.Generator, env_seed, *,
                run_id: str = "", episode: int = 0, scheme: str = "", gamma: float = 1.0,
                record_wall_time: bool = False) -> tuple[list[MetricRow], EpisodeStats]:
    """Play one episode, letting learners update as their batches fill."""
    start = time.perf_counter()
    env.want_aed = scheme == "AED"
    views = env.reset(env_seed)
    nn = scheme in NN_SCHEMES
    rows: list[MetricRow] = []
    rewards: list[float] = []
    mq_sum = re_sum = 0.0
    done = False
    while not done:
        t_step = time.perf_counter()
        t = env.world.t
        actions = []
        for g, (agent, view) in enumerate(zip(agents, views)):
            attack = env.threat_ctx.gateway_attack(t, g) if nn and env.threat_ctx is not None else None
            attack_rng = env.threat_ctx.rng if attack is not None else None
            actions.append(agent.act(view, rng, attack, attack_rng))
        res = env.step(actions)
        for agent, r in zip(agents, res.rewards):
            agent.observe(r, res.done)
        done = res.done
        views = env.views() if not done else views
        reward = res.reward
        rewards.append(reward)
        mq_sum += res.mq
        re_sum += res.re
        wall = (time.perf_counter() - t_step) * 1e3 if record_wall_time else None
        thr = env.threat.p_a if env.threat else 0.0, env.threat.p_ae if env.threat else 0.0
        rows.append(MetricRow(run_id, episode, env.step_index - 1, scheme, thr[0], thr[1], reward, res.mq, res.re,
                              tuple(p.rho for p in env.rho), wall))
    steps = len(rewards)
    stats = EpisodeStats(episode, steps, accumulated_return(rewards, gamma), mq_sum / steps, re_sum / steps,
                         (time.perf_counter() - start) * 1e3)
    return rows, stats


# -- transfer-learning pretraining ----------------------------------------------

_PRETRAIN_CACHE: dict[tuple, tuple[bytes, float]] = {}


def _pretrain_blob(cfg: ExperimentConfig) -> str:
    """Canonical text of everything a pretraining run depends on (attack settings excluded)."""
    relevant = {k: to_plain(getattr(cfg, k)) for k in ("farm", "energy", "fusion", "agents")}
    relevant["compromised_fraction"] = cfg.threat.compromised_fraction
    return json.dumps(relevant, sort_keys=True, separators=(",", ":"))


def pretrain(cfg: ExperimentConfig, kind: str, seed: int, episodes: int | None = None,
             cache_dir: str | Path | None = None) -> tuple[bytes, float]:
    """Checkpoint bytes and wall time (ms) of a plain-PPO pretraining run.

    ``FT`` trains the full multi-gateway farm; ``PT`` trains a single agent on
    a one-gateway farm. Pretraining is attack-free. Results are cached per
    configuration and seed, in memory and optionally on disk.
    """
    if kind not in ("FT", "PT"):
        raise ValueError(f"pretraining kind must be FT or PT, got {kind!r}")
    episodes = cfg.agents.pretrain_episodes if episodes is None else episodes
    blob = _pretrain_blob(cfg)
    key = (kind, seed, episodes, blob)
    path = None
    if cache_dir is not None:
        digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
        path = Path(cache_dir) / f"pretrain-{kind}-{digest}-s{seed}-e{episodes}.ckpt"
    if key in _PRETRAIN_CACHE:
        if path is not None and not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(_PRETRAIN_CACHE[key][0])
        return _PRETRAIN_CACHE[key]
    if path is not None and path.exists():
        data = path.read_bytes()
        header, _ = read_checkpoint(data)
        _PRETRAIN_CACHE[key] = (data, float(header["pretrain_ms"]))
        return _PRETRAIN_CACHE[key]
    farm = cfg.farm if kind == "FT" else dataclasses.replace(cfg.farm, num_gateways=1, gateway_positions=None)
    quiet = dataclasses.replace(cfg, threat=ThreatConfig(compromised_fraction=cfg.threat.compromised_fraction))
    env = build_env(quiet, 0.0, 0.0, farm=farm)
    start = time.perf_counter()
    agents = make_agents("PPO", env.num_agents, env.obs_dim, seed, cfg.agents)
    rng = np.random.default_rng([seed, 1])
    for ep in range(episodes):
        run_episode(env, agents, rng, [seed, ep], scheme="PPO")
    wall_ms = (time.perf_counter() - start) * 1e3
    lead: PpoAgent = agents[0]
    data = save_pretrained(lead, kind, seed, episodes, wall_ms)
    _PRETRAIN_CACHE[key] = (data, wall_ms)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return data, wall_ms


def save_pretrained(agent: PpoAgent, kind: str, seed: int, episodes: int, wall_ms: float) -> bytes:
    from .neural import save_checkpoint
    return save_checkpoint(agent.net, {"training_steps": agent.training_steps, "pretrain_kind": kind,
                                       "pretrain_episodes": episodes, "pretrain_ms": wall_ms, "seed": seed})


# -- cells ------------------------------------------------------------------------

def run_cell(cfg: ExperimentConfig, scheme: str | None = None, p_a: float | None = None,
             p_ae: float | None = None, seed: int | None = None, episodes: int | None = None,
             cache_dir: str | Path | None = None) -> CellResult:
    scheme = scheme or cfg.experiment.scheme
    p_a = cfg.threat.p_a if p_a is None else p_a
    p_ae = cfg.threat.p_ae if p_ae is None else p_ae
    seed = cfg.experiment.seed if seed is None else seed
    episodes = cfg.experiment.episodes if episodes is None else episodes
    run_id = make_run_id(scheme, p_a, p_ae, seed)
    try:
        env = build_env(cfg, p_a, p_ae)
        pretrained, pretrain_ms = None, 0.0
        if scheme in ("TL-PPO-FT", "TL-PPO-PT"):
            pretrained, pretrain_ms = pretrain(cfg, scheme[-2:], cfg.experiment.pretrain_seed_offset,
                                               cache_dir=cache_dir)
        agents = make_agents(scheme, env.num_agents, env.obs_dim, seed, cfg.agents, env.threat, pretrained)
        rng = np.random.default_rng([seed, 7])
        cell = CellResult(run_id, scheme, p_a, p_ae, seed, pretrain_ms=pretrain_ms)
        for ep in range(episodes):
            rows, stats = run_episode(env, agents, rng, [seed, ep], run_id=run_id, episode=ep, scheme=scheme,
                                      gamma=cfg.metrics.return_gamma,
                                      record_wall_time=cfg.experiment.record_wall_time)
            cell.rows.extend(rows)
            cell.episodes.append(stats)
            if env.threat_ctx is not None:
                cell.attacks.extend(env.threat_ctx.log)
        return cell
    except Exception as exc:
        raise RuntimeError(f"cell {run_id} failed: {exc}") from exc


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[str, float, float, int]]:
    exp = cfg.experiment
    return [(s, pa, pae, exp.seed + r) for s in exp.schemes for pa in exp.sweep_p_a for pae in exp.sweep_p_ae
            for r in range(exp.runs)]


def run_experiment(cfg: ExperimentConfig, cells: Iterable[tuple[str, float, float, int]] | None = None,
                   cache_dir: str | Path | None = None) -> list[CellResult]:
    """Run the given (scheme, p_a, p_ae, seed) cells, by default the single configured cell."""
    if cells is None:
        exp = cfg.experiment
        cells = [(exp.scheme, cfg.threat.p_a, cfg.threat.p_ae, exp.seed)]
    results = []
    for scheme, pa, pae, seed in cells:
        log.info("cell %s", make_run_id(scheme, pa, pae, seed))
        results.append(run_cell(cfg, scheme, pa, pae, seed, cache_dir=cache_dir))
    return sorted(results, key=lambda c: c.key)


# -- output ----------------------------------------------------------------------

def rows_to_csv(rows: Iterable[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv())
    return buf.getvalue()


def aggregate_table(metrics: pd.DataFrame, n_episodes: int = 50, gamma: float = 1.0) -> pd.DataFrame:
    """Per (scheme, p_a, p_ae): means over the first ``n_episodes`` episodes of every run."""
    cols = ["scheme", "p_a", "p_ae", "runs", "mean_reward", "mean_mq", "mean_re",
            "mean_accumulated_reward", "std_accumulated_reward"]
    if metrics.empty:
        return pd.DataFrame(columns=cols)
    df = metrics[metrics["episode"] < n_episodes].sort_values(["run_id", "episode", "step"])
    per_ep = df.groupby(["scheme", "p_a", "p_ae", "run_id", "episode"], sort=True).agg(
        reward=("reward", lambda r: accumulated_return(list(r), gamma)))
    per_run = per_ep.groupby(["scheme", "p_a", "p_ae", "run_id"]).agg(acc=("reward", "mean")).reset_index()
    means = df.groupby(["scheme", "p_a", "p_ae"], sort=True).agg(
        mean_reward=("reward", "mean"), mean_mq=("mq", "mean"), mean_re=("re", "mean")).reset_index()
    accs = per_run.groupby(["scheme", "p_a", "p_ae"], sort=True).agg(
        runs=("run_id", "nunique"), mean_accumulated_reward=("acc", "mean"),
        std_accumulated_reward=("acc", lambda a: float(np.std(a, ddof=1)) if len(a) > 1 else 0.0)).reset_index()
    return means.merge(accs, on=["scheme", "p_a", "p_ae"])[cols]


def emit_results(cells: Sequence[CellResult], out: str | Path, cfg: ExperimentConfig) -> dict[str, Path]:
    """Write metrics.csv, attacks.csv, aggregate.csv, runtime.csv and summary.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cells = sorted(cells, key=lambda c: c.key)
    paths = {name: out / name for name in ("metrics.csv", "attacks.csv", "aggregate.csv", "runtime.csv",
                                           "summary.json")}
    paths["metrics.csv"].write_text(rows_to_csv(r for c in cells for r in c.rows))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("run_id", "t", "attack_type", "target_id", "fired"))
    for c in cells:
        for ev in c.attacks:
            writer.writerow((c.run_id, repr(ev.t), ev.attack_type, ev.target_id, int(ev.fired)))
    paths["attacks.csv"].write_text(buf.getvalue())

    metrics = pd.read_csv(paths["metrics.csv"], keep_default_na=False, dtype={"wall_ms": str})
    aggregate_table(metrics, cfg.metrics.aggregate_episodes, cfg.metrics.return_gamma).to_csv(
        paths["aggregate.csv"], index=False, lineterminator="\n")

    runtime = pd.DataFrame([
        {"run_id": c.run_id, "episode": e.episode, "wall_ms": round(e.wall_ms, 3), "pretrain_ms": round(c.pretrain_ms, 3)}
        for c in cells for e in c.episodes
    ], columns=["run_id", "episode", "wall_ms", "pretrain_ms"])
    runtime.to_csv(paths["runtime.csv"], index=False, lineterminator="\n")

    summary = {
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": cfg.experiment.seed,
        "cells": [c.summary(cfg.metrics.runtime_episodes) for c in cells],
    }
    ratio = runtime_ratio(cells)
    if ratio is not None:
        summary["runtime_ratio_dtppo_vs_tlft"] = ratio
    paths["summary.json"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    return paths


def runtime_ratio(cells: Sequence[CellResult]) -> float | None:
    """Total DT-PPO wall time over the TL-PPO-FT total including pretraining."""
    dt = [c.total_ms for c in cells if c.scheme == "DT-PPO"]
    tl = [c.total_ms for c in cells if c.scheme == "TL-PPO-FT"]
    if not dt or not tl:
        return None
    return float(np.mean(dt) / np.mean(tl))
