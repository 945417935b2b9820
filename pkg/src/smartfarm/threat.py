"""Sensor-level cyber attacks and gateway-level adversarial attacks on the policy.

Sensor attacks (false data, non-compliance, DoS flooding, obstruction) are
drawn per compromised node per round. Gateway attacks (trojan logit swap,
FGSM, PGD) are drawn per gateway per decision and only touch the neural part
of a policy. All randomness comes from the context's own generator, so a run
with zero attack probabilities is identical to one without a threat model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .energy import BLE, Category, EnergyLedger, EnergyPolicy, apply_consumption, transmit_cost
from .neural import NUM_ACTIONS, PolicyNet, softmax_temp


class AttackType(str, enum.Enum):
    FALSE_DATA = "false_data"
    NON_COMPLIANCE = "non_compliance"
    DOS = "dos"
    OBSTRUCT = "obstruct"
    TROJAN = "trojan"
    FGSM = "fgsm"
    PGD = "pgd"


GATEWAY_ATTACKS = (AttackType.TROJAN, AttackType.FGSM, AttackType.PGD)

# out-of-band intervals used by the false-data injector, per attribute
FALSE_BANDS = {
    "temp": ((34.0, 37.8), (39.2, 43.0)),
    "hb": ((30.0, 48.0), (84.0, 120.0)),
    "ma": ((0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)),
}


@dataclass(frozen=True)
class ThreatConfig:
    p_a: float = 0.0
    p_ae: float = 0.0
    compromised_fraction: float = 0.3
    fgsm_eps: float = 0.1
    pgd_steps: int = 10
    pgd_alpha: float = 0.01
    dos_fake_requests: int = 5
    obstruct_duration_rounds: int = 3

    def __post_init__(self) -> None:
        for name in ("p_a", "p_ae", "compromised_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.fgsm_eps <= 0:
            raise ValueError(f"fgsm_eps must be positive, got {self.fgsm_eps}")
        if self.pgd_steps < 1 or self.pgd_alpha <= 0:
            raise ValueError("pgd_steps must be >= 1 and pgd_alpha > 0")
        if self.dos_fake_requests < 0 or self.obstruct_duration_rounds < 0:
            raise ValueError("dos_fake_requests and obstruct_duration_rounds must be non-negative")


class AttackEvent(NamedTuple):
    t: float
    attack_type: str
    target_id: int
    fired: bool


def compromise_init(num_sensors: int, fraction: float, rng: np.random.Generator) -> frozenset[int]:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    k = int(math.floor(fraction * num_sensors + 1e-9))
    if k == 0:
        return frozenset()
    return frozenset(int(i) for i in rng.choice(num_sensors, size=k, replace=False))


def _draw_out_of_band(bands: tuple[tuple[float, float], ...], rng: np.random.Generator) -> float:
    (lo1, hi1), (lo2, hi2) = bands
    len1, len2 = hi1 - lo1, hi2 - lo2
    x = rng.random() * (len1 + len2)
    if x < len1:
        return lo1 + x  # [lo1, hi1)
    return hi2 - (x - len1)  # (lo2, hi2]


def inject_false_data(record, rng: np.random.Generator, bands=FALSE_BANDS):
    """Replace temp, hb and ma with values outside their normal bands."""
    return record._replace(
        temp=_draw_out_of_band(bands["temp"], rng),
        hb=_draw_out_of_band(bands["hb"], rng),
        ma=_draw_out_of_band(bands["ma"], rng),
        tampered=True,
    )


class Disposition(str, enum.Enum):
    DELIVER = "deliver"
    DROP = "drop"
    SUBSTITUTE = "substitute"


@dataclass(frozen=True)
class TransferEvent:
    sender_id: int
    sender_is_hes: bool
    record: object
    non_compliant: bool = False
    # records the sender could pass off in place of the requested one
    alternatives: tuple = ()


def non_compliance(event: TransferEvent, rng: np.random.Generator):
    """Decide what a (possibly misbehaving) sender does with a requested record.

    Returns ``(Disposition, record_or_None)``. An honest sender delivers. A
    misbehaving LES ignores the request. A misbehaving HES drops the record or
    swaps in one from a different sensor, with equal odds; with no such record
    available it drops.
    """
    if not event.non_compliant:
        return Disposition.DELIVER, event.record
    if not event.sender_is_hes:
        return Disposition.DROP, None
    others = [r for r in event.alternatives if r.sensor_id != event.record.sensor_id]
    if rng.random() < 0.5 and others:
        return Disposition.SUBSTITUTE, others[int(rng.integers(len(others)))]
    return Disposition.DROP, None


def dos_flood(hes_ledger: EnergyLedger, count: int, policy: EnergyPolicy = EnergyPolicy()) -> EnergyLedger:
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    return apply_consumption(hes_ledger, Category.SS, count * transmit_cost(BLE, policy.packet_bits))


@dataclass(frozen=True)
class ObstructionWindow:
    sensor_id: int
    start_s: float
    end_s: float  # exclusive

    def covers(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


def obstruct(sensor_id: int, t: float, duration_rounds: int = 3, upload_interval_s: float = 30.0) -> ObstructionWindow:
    return ObstructionWindow(sensor_id, float(t), float(t) + duration_rounds * upload_interval_s)


# -- adversarial examples against the policy network ---------------------------

def greedy_action(net: PolicyNet, x: np.ndarray) -> int:
    logits, _ = net.forward(x)
    return int(np.argmax(logits))


def action_loss(net: PolicyNet, x: np.ndarray, action: int) -> float:
    """Negative log-probability of ``action`` under the network's softmax."""
    logits, _ = net.forward(x)
    return float(-np.log(softmax_temp(logits)[action]))


def loss_input_gradient(net: PolicyNet, x: np.ndarray, action: int) -> np.ndarray:
    out = net.forward_raw(x)[0]
    g = np.zeros_like(out)
    g[:NUM_ACTIONS] = softmax_temp(out[:NUM_ACTIONS])
    g[action] -= 1.0
    return net.backward(g).inputs


def fgsm_perturb(observation: np.ndarray, net: PolicyNet, eps: float) -> np.ndarray:
    x = np.asarray(observation, dtype=np.float64)
    if eps == 0:
        return x.copy()
    grad = loss_input_gradient(net, x, greedy_action(net, x))
    return x + eps * np.sign(grad)


def pgd_perturb(observation: np.ndarray, net: PolicyNet, eps: float, alpha: float, steps: int,
                trace: list | None = None) -> np.ndarray:
    """Iterated sign-gradient ascent projected onto the L-inf ball around the start.

    The target action stays the greedy action at the unperturbed input.
    Pass a list as ``trace`` to collect every iterate.
    """
    x0 = np.asarray(observation, dtype=np.float64)
    action = greedy_action(net, x0)
    x = x0.copy()
    for _ in range(steps):
        grad = loss_input_gradient(net, x, action)
        x = np.clip(x + alpha * np.sign(grad), x0 - eps, x0 + eps)
        if trace is not None:
            trace.append(x.copy())
    return x


def trojan_trigger(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Swap the top logit with a uniformly chosen other one."""
    out = np.array(logits, dtype=np.float64)
    top = int(np.argmax(out))
    others = [i for i in range(len(out)) if i != top]
    j = others[int(rng.integers(len(others)))]
    out[top], out[j] = out[j], out[top]
    return out


# -- per-run attack state ------------------------------------------------------

class ThreatContext:
    """Compromised set, obstruction windows and the attack log of one run."""

    def __init__(self, config: ThreatConfig, num_sensors: int, rng: np.random.Generator | int | None,
                 ble_range_m: float = 100.0, upload_interval_s: float = 30.0) -> None:
        self.config = config
        self.rng = np.random.default_rng(rng)
        self.compromised = compromise_init(num_sensors, config.compromised_fraction, self.rng)
        self._compromised_sorted = sorted(self.compromised)
        self.ble_range_m = ble_range_m
        self.upload_interval_s = upload_interval_s
        self.windows: dict[int, ObstructionWindow] = {}
        self.log: list[AttackEvent] = []

    def _record(self, t: float, kind: AttackType | str, target: int, fired: bool = True) -> None:
        self.log.append(AttackEvent(float(t), AttackType(kind).value, int(target), fired))

    def begin_round(self, t: float, positions: np.ndarray, hes_mask: np.ndarray, alive: np.ndarray,
                    ledgers: Sequence[EnergyLedger], policy: EnergyPolicy) -> dict[int, str]:
        """Draw this round's sensor attacks; DoS and obstruction take effect immediately."""
        cfg = self.config
        attacks: dict[int, str] = {}
        if cfg.p_a == 0.0:
            return attacks
        for sid in self._compromised_sorted:
            if self.rng.random() >= cfg.p_a:
                continue
            victims = np.flatnonzero(hes_mask)
            victims = victims[victims != sid]
            victim = -1
            if len(victims):
                d = np.hypot(*(positions[victims] - positions[sid]).T)
                k = int(np.argmin(d))
                if d[k] <= self.ble_range_m:
                    victim = int(victims[k])
            kinds = [AttackType.FALSE_DATA, AttackType.NON_COMPLIANCE, AttackType.OBSTRUCT]
            if victim >= 0:
                kinds.append(AttackType.DOS)
            kind = kinds[int(self.rng.integers(len(kinds)))]
            if kind is AttackType.DOS:
                cost = cfg.dos_fake_requests * transmit_cost(BLE, policy.packet_bits)
                ledgers[victim].spend(Category.SS, cost)
                self._record(t, kind, victim)
                continue
            if kind is AttackType.OBSTRUCT:
                if cfg.obstruct_duration_rounds > 0:
                    self.windows[sid] = obstruct(sid, t, cfg.obstruct_duration_rounds, self.upload_interval_s)
                self._record(t, kind, sid, cfg.obstruct_duration_rounds > 0)
                continue
            attacks[sid] = kind.value
            self._record(t, kind, sid, bool(alive[sid]))
        return attacks

    def blocked_mask(self, t: float, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        for sid, win in self.windows.items():
            if win.covers(t):
                out[sid] = True
        return out

    def is_obstructed(self, sensor_id: int, t: float) -> bool:
        win = self.windows.get(sensor_id)
        return win is not None and win.covers(t)

    def tamper(self, record):
        return inject_false_data(record, self.rng)

    def filter_upload(self, hes_id: int, batch: list, t: float) -> list:
        """Apply a misbehaving HES to its outgoing batch.

        Relayed records are each dropped or replaced by one of the HES's own
        records; with nothing relayed the HES withholds its own upload.
        """
        own = [r for r in batch if r.sensor_id == hes_id]
        relayed = [r for r in batch if r.sensor_id != hes_id]
        if not relayed:
            return []
        out = list(own)
        for rec in relayed:
            event = TransferEvent(hes_id, True, rec, True, tuple(own))
            verdict, sent = non_compliance(event, self.rng)
            if verdict is Disposition.SUBSTITUTE:
                out.append(sent)
        return out

    def gateway_attack(self, t: float, gateway_id: int) -> AttackType | None:
        """Per-decision draw of an adversarial attack on one gateway's policy."""
        if self.config.p_ae == 0.0:
            return None
        if self.rng.random() >= self.config.p_ae:
            return None
        kind = GATEWAY_ATTACKS[int(self.rng.integers(len(GATEWAY_ATTACKS)))]
        self._record(t, kind, gateway_id)
        return kind
