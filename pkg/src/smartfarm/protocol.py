"""Per-round data movement: HES uploads over LoRa, rho-selected LES relays over BLE.

One round lasts one upload interval T_u. Its order is fixed:

1. every live sensor senses and stores a record (compromised ones may tamper it);
2. every connected HES uploads its whole store to its gateway, including records
   relayed to it during the previous round;
3. each gateway picks the lowest-battery ``floor(rho * |LES|)`` of the LES it
   covers, and each picked LES hands its newest record to the nearest HES in
   BLE range;
4. every sensor pays its active or sleep draw and harvests.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .energy import BLE, LORA, Category, EnergyLedger, EnergyPolicy, transmit_cost
from .world import WorldState, harvest_joules, nearest_gateway


class SensorRecord(NamedTuple):
    sensor_id: int
    timestamp_s: float
    temp: float
    hb: float
    ma: float
    bl: float
    tampered: bool = False


@dataclass
class SensorStore:
    """Bounded, time-ordered record buffer; the oldest record goes first when full."""

    capacity: int = 32
    records: list[SensorRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"store capacity must be at least 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.records)

    def pop_newest(self) -> SensorRecord | None:
        return self.records.pop() if self.records else None

    def drain(self) -> list[SensorRecord]:
        out, self.records = self.records, []
        return out


def store_insert(store: SensorStore, record: SensorRecord) -> SensorStore:
    """Insert ``record`` in timestamp order (in place) and evict the oldest on overflow."""
    recs = store.records
    if not recs or recs[-1].timestamp_s <= record.timestamp_s:
        recs.append(record)
    else:
        keys = [r.timestamp_s for r in recs]
        recs.insert(bisect.bisect_right(keys, record.timestamp_s), record)
    if len(recs) > store.capacity:
        del recs[0]
    return store


class Action(enum.IntEnum):
    INCREASE = 0
    DECREASE = 1
    STAY = 2


@dataclass(frozen=True)
class RhoPolicy:
    rho: float = 0.5
    tau: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")


def rho_delta(action: Action | int, tau: float) -> float:
    return {Action.INCREASE: tau, Action.DECREASE: -tau, Action.STAY: 0.0}[Action(action)]


def apply_action(policy: RhoPolicy, action: Action | int) -> RhoPolicy:
    # rounding keeps repeated +/- tau steps on the decimal grid
    rho = round(min(1.0, max(0.0, policy.rho + rho_delta(action, policy.tau))), 12)
    return replace(policy, rho=rho)


def transmit_count(rho: float, n: int) -> int:
    # the epsilon absorbs float error such as 0.3 * 10 = 2.9999999999999996
    return min(n, int(math.floor(rho * n + 1e-9)))


def select_transmitters(les: Mapping[int, EnergyLedger | float], rho: float) -> list[int]:
    """Lowest-battery prefix of the LES set, ties broken by sensor id."""
    def level(x):
        return x.battery_norm if isinstance(x, EnergyLedger) else float(x)
    order = sorted(les, key=lambda sid: (level(les[sid]), sid))
    return order[:transmit_count(rho, len(order))]


@dataclass
class RoundOutcome:
    t: float
    delivered: list[list[SensorRecord]]  # per gateway
    selected: list[list[int]]  # per gateway, LES picked to transmit
    relayed: list[tuple[int, int]]  # (LES, HES) pairs that completed a BLE hand-off
    hes: frozenset[int]
    les: frozenset[int]
    e_sg_j: float = 0.0
    e_ss_j: float = 0.0

    @property
    def delivered_count(self) -> int:
        return sum(len(d) for d in self.delivered)


def _nearest_within(src: np.ndarray, dst: np.ndarray, radius: float) -> np.ndarray:
    """Index of the nearest ``dst`` point for each ``src`` point, -1 if none within radius."""
    if len(dst) == 0 or len(src) == 0:
        return np.full(len(src), -1)
    d = np.hypot(src[:, None, 0] - dst[None, :, 0], src[:, None, 1] - dst[None, :, 1])
    idx = np.argmin(d, axis=1)
    best = d[np.arange(len(src)), idx]
    return np.where(best <= radius, idx, -1)


def execute_round(
    world: WorldState,
    ledgers: Sequence[EnergyLedger],
    stores: Sequence[SensorStore],
    rho: float | Sequence[float],
    threat_ctx=None,
    t: float | None = None,
    policy: EnergyPolicy = EnergyPolicy(),
) -> RoundOutcome:
    """Run one upload interval in place on ``ledgers`` and ``stores``.

    ``rho`` may be a single fraction or one per gateway. ``threat_ctx`` is a
    ``ThreatContext`` or None for an attack-free round.
    """
    cfg = world.config
    t = world.t if t is None else t
    n = world.num_animals
    n_gw = len(world.gateway_xy)
    rhos = [float(rho)] * n_gw if np.isscalar(rho) else [float(r) for r in rho]
    if len(rhos) != n_gw:
        raise ValueError(f"expected {n_gw} rho values, got {len(rhos)}")
    t_u = cfg.upload_interval_s
    sg_cost = transmit_cost(LORA, policy.packet_bits)
    ss_cost = transmit_cost(BLE, policy.packet_bits)

    levels = np.array([led.battery_norm for led in ledgers])
    alive = levels > 0.0
    hes_mask = alive & (levels > policy.l_bl)
    hes = frozenset(int(i) for i in np.flatnonzero(hes_mask))
    les = frozenset(range(n)) - hes
    owner = nearest_gateway(world)

    attacks = {}
    if threat_ctx is not None:
        attacks = threat_ctx.begin_round(t, world.positions, hes_mask, alive, ledgers, policy)
    blocked = threat_ctx.blocked_mask(t, n) if threat_ctx is not None else np.zeros(n, dtype=bool)

    # 1. sensing
    for sid in np.flatnonzero(alive):
        sid = int(sid)
        v = world.vitals[sid]
        rec = SensorRecord(sid, float(t), float(v[0]), float(v[1]), float(v[2]), float(levels[sid]))
        if attacks.get(sid) == "false_data":
            rec = threat_ctx.tamper(rec)
        store_insert(stores[sid], rec)

    transmitted = np.zeros(n, dtype=bool)
    delivered: list[list[SensorRecord]] = [[] for _ in range(n_gw)]
    e_sg = 0.0

    # 2. HES uploads
    for sid in sorted(hes):
        if blocked[sid]:
            continue
        batch = stores[sid].drain()
        if attacks.get(sid) == "non_compliance":
            batch = threat_ctx.filter_upload(sid, batch, t)
        if not batch:
            continue
        cost = sg_cost * len(batch)
        e_sg += ledgers[sid].spend(Category.SG, cost)
        delivered[int(owner[sid])].extend(batch)
        transmitted[sid] = True

    # 3. rho-selected LES hand their newest record to the nearest HES
    relay_ok = np.array(sorted(h for h in hes if not blocked[h]), dtype=int)
    selected: list[list[int]] = []
    relayed: list[tuple[int, int]] = []
    e_ss = 0.0
    for g in range(n_gw):
        covered = {sid: levels[sid] for sid in les if owner[sid] == g}
        pick = select_transmitters(covered, rhos[g])
        selected.append(pick)
        if not pick:
            continue
        senders = np.array(pick, dtype=int)
        target = _nearest_within(world.positions[senders], world.positions[relay_ok], cfg.ble_range_m)
        for sid, tix in zip(pick, target):
            if not alive[sid] or blocked[sid] or tix < 0:
                continue
            if attacks.get(sid) == "non_compliance":
                continue  # ignores the request
            rec = stores[sid].pop_newest()
            if rec is None:
                continue
            e_ss += ledgers[sid].spend(Category.SS, ss_cost)
            hes_id = int(relay_ok[tix])
            store_insert(stores[hes_id], rec)
            relayed.append((sid, hes_id))
            transmitted[sid] = True

    # 4. background draw and harvest
    harvest = harvest_joules(cfg.exposure_at(t), t_u, cfg.panel_area_cm2)
    active_j = policy.active_w * t_u
    sleep_j = policy.sleep_w * t_u
    for sid, led in enumerate(ledgers):
        if transmitted[sid]:
            led.spend(Category.ACTIVE, active_j)
        else:
            led.spend(Category.SLEEP, sleep_j)
        led.charge(harvest)

    return RoundOutcome(float(t), delivered, selected, relayed, hes, les, e_sg, e_ss)
