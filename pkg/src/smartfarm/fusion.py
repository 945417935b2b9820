"""Subjective-logic opinions over K=3 condition classes and deceptive-data filtering.

All math is written once against numpy arrays whose last axis is the class
axis, so the same functions serve single opinions and the per-gateway
``OpinionBank`` used inside the simulator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

K = 3
ATTRIBUTES = ("temp", "hb", "ma")
PRIOR_WEIGHT = 2.0
EVIDENCE_DECAY = 0.99


@dataclass(frozen=True)
class ClassBoundaries:
    """Cut points (low, high) per attribute; normal class is the closed band."""

    temp: tuple[float, float] = (37.8, 39.2)
    hb: tuple[float, float] = (48.0, 84.0)
    ma: tuple[float, float] = (1.0 / 3.0, 2.0 / 3.0)

    def __post_init__(self) -> None:
        for name in ATTRIBUTES:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: cut_low must be < cut_high, got {(lo, hi)}")

    def cuts(self) -> np.ndarray:
        return np.array([self.temp, self.hb, self.ma], dtype=float)


DEFAULT_BOUNDARIES = ClassBoundaries()


def classify(value, cuts: tuple[float, float]):
    """0 below the band, 1 inside it (inclusive), 2 above. Works on arrays."""
    lo, hi = cuts
    v = np.asarray(value)
    out = np.where(v < lo, 0, np.where(v > hi, 2, 1))
    return int(out) if out.ndim == 0 else out


def classify_vitals(values: np.ndarray, boundaries: ClassBoundaries = DEFAULT_BOUNDARIES) -> np.ndarray:
    """Classify an (..., 3) array of (temp, hb, ma) readings."""
    values = np.asarray(values, dtype=float)
    cuts = boundaries.cuts()
    lo, hi = cuts[:, 0], cuts[:, 1]
    return np.where(values < lo, 0, np.where(values > hi, 2, 1)).astype(np.int8)


# -- array kernels -----------------------------------------------------------

def _uniform(k: int = K) -> np.ndarray:
    return np.full(k, 1.0 / k)


def projected(b: np.ndarray, u, a: np.ndarray) -> np.ndarray:
    return b + a * np.asarray(u)[..., None]


def from_evidence(r: np.ndarray, w: float = PRIOR_WEIGHT) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    denom = w + r.sum(axis=-1)
    return r / denom[..., None], w / denom


def to_evidence(b: np.ndarray, u: np.ndarray, w: float = PRIOR_WEIGHT) -> np.ndarray:
    """Inverse of ``from_evidence``. Requires u > 0."""
    return w * b / np.asarray(u)[..., None]


def maximize_uncertainty(b: np.ndarray, u, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = projected(b, u, a)
    ratio = p / a
    if ratio.ndim == 1:
        i = int(np.argmin(ratio))
        u_max = float(ratio[i])
        b_new = np.maximum(p - a * u_max, 0.0)
        b_new[i] = 0.0
        return b_new, u_max
    idx = np.argmin(ratio, axis=-1)[..., None]
    u_max = np.take_along_axis(ratio, idx, axis=-1)[..., 0]
    b_new = np.maximum(p - a * u_max[..., None], 0.0)
    # the class attaining the minimum loses all belief mass, exactly
    np.put_along_axis(b_new, idx, 0.0, axis=-1)
    return b_new, u_max


def distance(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(pa - pb).sum(axis=-1)


# -- scalar API ----------------------------------------------------------------

@dataclass(frozen=True)
class Opinion:
    b: np.ndarray
    u: float
    a: np.ndarray = field(default_factory=_uniform)

    def __post_init__(self) -> None:
        b = np.asarray(self.b, dtype=float)
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", float(self.u))
        if b.shape != a.shape:
            raise ValueError(f"belief and base rate shapes differ: {b.shape} vs {a.shape}")
        if b.min() < -1e-12 or self.u < -1e-12:
            raise ValueError("opinion masses must be non-negative")
        total = self.u + float(b.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"u + sum(b) must be 1, got {total}")
        if abs(float(a.sum()) - 1.0) > 1e-9:
            raise ValueError(f"base rates must sum to 1, got {a.sum()}")

    @classmethod
    def vacuous(cls, k: int = K) -> "Opinion":
        return cls(np.zeros(k), 1.0, _uniform(k))

    def projected(self) -> np.ndarray:
        return projected_probability(self)


@dataclass(frozen=True)
class EvidenceCounts:
    r: np.ndarray
    prior_weight: float = PRIOR_WEIGHT

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "r", r)
        if np.any(r < 0):
            raise ValueError("evidence counts must be non-negative")
        if self.prior_weight <= 0:
            raise ValueError("prior weight must be positive")


def opinion_from_evidence(counts: EvidenceCounts, a: np.ndarray | None = None) -> Opinion:
    b, u = from_evidence(counts.r, counts.prior_weight)
    return Opinion(b, float(u), _uniform(len(counts.r)) if a is None else a)


def projected_probability(op: Opinion) -> np.ndarray:
    return projected(op.b, op.u, op.a)


def uncertainty_maximize(op: Opinion) -> Opinion:
    if op.a.min() <= 0:
        raise ValueError("uncertainty maximization needs strictly positive base rates")
    b, u = maximize_uncertainty(op.b, op.u, op.a)
    return Opinion(b, float(u), op.a)


def evidence_of(op: Opinion, w: float = PRIOR_WEIGHT) -> np.ndarray:
    if op.u <= 0:
        raise ValueError("a dogmatic opinion has unbounded evidence")
    return to_evidence(op.b, op.u, w)


def update_opinion(
    state: Mapping[str, Opinion],
    records: Sequence,
    boundaries: ClassBoundaries = DEFAULT_BOUNDARIES,
    w: float = PRIOR_WEIGHT,
) -> dict[str, Opinion]:
    """Fold one animal's delivered records into its per-attribute opinions.

    Each record adds one unit of evidence to the class its reading falls in;
    the opinion is rebuilt from the accumulated evidence and then
    uncertainty-maximized. No records leaves the state untouched.
    """
    if not records:
        return dict(state)
    values = np.array([[rec.temp, rec.hb, rec.ma] for rec in records], dtype=float)
    classes = classify_vitals(values, boundaries)
    out: dict[str, Opinion] = {}
    for j, name in enumerate(ATTRIBUTES):
        prev = state.get(name, Opinion.vacuous())
        r = evidence_of(prev, w) + np.bincount(classes[:, j], minlength=K)
        out[name] = uncertainty_maximize(opinion_from_evidence(EvidenceCounts(r, w), prev.a))
    for name, op in state.items():
        out.setdefault(name, op)
    return out


def projected_distance(op_a: Opinion, op_b: Opinion) -> float:
    if op_a.a is not op_b.a and (op_a.a.shape != op_b.a.shape or np.abs(op_a.a - op_b.a).max() > 1e-9):
        raise ValueError("opinions must share the class domain and base rates")
    return float(distance(projected_probability(op_a), projected_probability(op_b)))


def mean_peer_distance(own: Opinion, peers: Sequence[Opinion]) -> float:
    if not peers:
        raise ValueError("mean peer distance needs at least one peer opinion")
    return sum(projected_distance(own, p) for p in peers) / len(peers)


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


def deception_filter(candidate: Opinion, own: Opinion, peers: Sequence[Opinion], phi: float) -> Verdict:
    """Reject an update whose resulting opinion sits farther than ``phi`` from the peers.

    ``candidate`` is the opinion the gateway would hold after applying the
    update; on rejection the caller keeps ``own``, which does not enter the
    decision itself.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must be in [0, 1], got {phi}")
    return Verdict.REJECT if mean_peer_distance(candidate, peers) > phi else Verdict.ACCEPT


# -- vectorized state for the simulator ---------------------------------------

class OpinionBank:
    """Opinions held by every gateway about every animal and attribute.

    Arrays are shaped (gateways, animals, attributes, K) for beliefs and
    (gateways, animals, attributes) for uncertainty. Base rates are uniform.
    """

    def __init__(self, num_gateways: int, num_animals: int, w: float = PRIOR_WEIGHT,
                 decay: float = EVIDENCE_DECAY, phi: float = 0.5, peer_u_max: float = 0.5) -> None:
        self.w = w
        self.decay = decay
        self.phi = phi
        # peers with more vacuity than this hold too little evidence to vote
        self.peer_u_max = peer_u_max
        self.a = _uniform(K)
        shape = (num_gateways, num_animals, len(ATTRIBUTES))
        self.b = np.zeros(shape + (K,))
        self.u = np.ones(shape)

    @property
    def num_gateways(self) -> int:
        return self.b.shape[0]

    def opinion(self, g: int, animal: int, attr: int) -> Opinion:
        return Opinion(self.b[g, animal, attr].copy(), float(self.u[g, animal, attr]), self.a)

    def projected(self) -> np.ndarray:
        return projected(self.b, self.u, self.a)

    def apply_decay(self) -> None:
        if self.decay >= 1.0:
            return
        r = to_evidence(self.b, self.u, self.w) * self.decay
        self.b, self.u = from_evidence(r, self.w)

    def update(self, counts: np.ndarray) -> np.ndarray:
        """Fold class counts (G, N, A, K) in; return the accepted mask (G, N, A).

        A candidate is discarded when its mean projected distance to the
        informed peers (other gateways with u <= peer_u_max) exceeds ``phi``.
        With no informed peer the update is accepted. Cells without new
        evidence are reported as not accepted and left untouched.
        """
        has = counts.sum(axis=-1) > 0
        if not has.any():
            return has
        r = to_evidence(self.b, self.u, self.w) + counts
        cb, cu = from_evidence(r, self.w)
        cb, cu = maximize_uncertainty(cb, cu, self.a)
        g = self.num_gateways
        accept = has.copy()
        if g > 1:
            p_now = self.projected()
            p_cand = projected(cb, cu, self.a)
            informed = self.u <= self.peer_u_max
            pd_sum = np.zeros(has.shape)
            n_peer = np.zeros(has.shape)
            for h in range(g):
                peer = np.arange(g) != h
                d = distance(p_cand[peer], p_now[h][None])
                pd_sum[peer] += np.where(informed[h][None], d, 0.0)
                n_peer[peer] += informed[h][None]
            voted = n_peer > 0
            mean_pd = np.divide(pd_sum, n_peer, out=np.zeros_like(pd_sum), where=voted)
            accept &= ~(voted & (mean_pd > self.phi))
        self.b = np.where(accept[..., None], cb, self.b)
        self.u = np.where(accept, cu, self.u)
        return accept
