"""Monitoring quality, accumulated return, weighted objective and runtime summaries."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

NUM_VITALS = 3  # temp, hb, ma; the battery field has no ground-truth condition


@dataclass(frozen=True)
class MetricRow:
    run_id: str
    episode: int
    step: int
    scheme: str
    p_a: float
    p_ae: float
    reward: float
    mq: float
    re: float
    rho: tuple[float, ...]
    wall_ms: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.mq <= 1.0 or not 0.0 <= self.re <= 1.0:
            raise ValueError(f"mq and re must lie in [0, 1], got {self.mq}, {self.re}")
        if not 0.0 <= self.reward <= 2.0 + 1e-12:
            raise ValueError(f"reward must lie in [0, 2], got {self.reward}")

    def as_csv(self) -> list[str]:
        return [
            self.run_id,
            str(self.episode),
            str(self.step),
            self.scheme,
            repr(float(self.p_a)),
            repr(float(self.p_ae)),
            repr(float(self.reward)),
            repr(float(self.mq)),
            repr(float(self.re)),
            ";".join(repr(float(r)) for r in self.rho),
            "" if self.wall_ms is None else f"{self.wall_ms:.3f}",
        ]


CSV_COLUMNS = tuple(f.name for f in fields(MetricRow))


class GroundTruthLog:
    """True condition classes of every animal at every sensing instant."""

    def __init__(self) -> None:
        self._by_t: dict[float, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._by_t)

    def record(self, t: float, classes: np.ndarray) -> None:
        self._by_t[float(t)] = np.array(classes, dtype=np.int8)

    def at(self, t: float) -> np.ndarray:
        return self._by_t[float(t)]

    def times(self) -> list[float]:
        return sorted(self._by_t)


def monitoring_quality(delivered_classes: np.ndarray, ground_truth: np.ndarray, X: int | None = None,
                       d: int = NUM_VITALS) -> float:
    """Share of the X*d expected data points whose delivered class matches the truth.

    ``delivered_classes`` and ``ground_truth`` are (X, d) integer arrays;
    undelivered points are marked with -1 and never match. With X = 0 there
    is nothing to monitor and the result is 0.
    """
    delivered = np.asarray(delivered_classes)
    truth = np.asarray(ground_truth)
    if X is None:
        X = delivered.shape[0] if delivered.ndim else 0
    if X == 0:
        return 0.0
    if delivered.shape != truth.shape or delivered.shape != (X, d):
        raise ValueError(f"expected ({X}, {d}) arrays, got {delivered.shape} and {truth.shape}")
    matches = np.count_nonzero((delivered >= 0) & (delivered == truth))
    return matches / (X * d)


def accumulated_return(rewards: Sequence[float], gamma: float = 1.0) -> float:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    total, disc = 0.0, 1.0
    for r in rewards:
        total += disc * r
        disc *= gamma
    return total


def weighted_objective(mq: float, re: float) -> float:
    return 0.5 * mq + 0.5 * re


def runtime_stats(episode_ms: Iterable[float], n: int = 50, pretrain_ms: float = 0.0) -> float:
    """Mean wall time per episode, plus pretraining time amortized over ``n`` episodes."""
    times = list(episode_ms)
    if not times:
        raise ValueError("runtime_stats needs at least one episode")
    if n < 1:
        raise ValueError("n must be positive")
    return sum(times) / len(times) + pretrain_ms / n


def summarize(rows: Sequence[MetricRow]) -> dict:
    if not rows:
        return {"steps": 0}
    arr = np.array([(r.reward, r.mq, r.re) for r in rows])
    return {
        "steps": len(rows),
        "mean_reward": float(arr[:, 0].mean()),
        "mean_mq": float(arr[:, 1].mean()),
        "mean_re": float(arr[:, 2].mean()),
    }
