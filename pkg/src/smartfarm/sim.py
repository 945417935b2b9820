"""Multi-gateway farm environment: one step is one decision interval of several rounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import AgentView
from .energy import BLE, EnergyLedger, EnergyPolicy, transmit_cost
from .fusion import ATTRIBUTES, DEFAULT_BOUNDARIES, K, ClassBoundaries, OpinionBank, classify_vitals
from .metrics import GroundTruthLog, NUM_VITALS
from .protocol import (
    Action,
    RhoPolicy,
    RoundOutcome,
    SensorStore,
    apply_action,
    execute_round,
    select_transmitters,
)
from .threat import ThreatConfig, ThreatContext
from .world import FarmConfig, init_world, nearest_gateway, sample_all_vitals, step_movement


@dataclass(frozen=True)
class FusionConfig:
    phi: float = 0.5
    prior_weight: float = 2.0
    decay: float = 0.99
    peer_u_max: float = 0.5
    store_capacity: int = 32

    def __post_init__(self) -> None:
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError(f"phi must be in [0, 1], got {self.phi}")
        if self.prior_weight <= 0:
            raise ValueError("prior_weight must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if not 0.0 <= self.peer_u_max <= 1.0:
            raise ValueError("peer_u_max must be in [0, 1]")
        if self.store_capacity < 1:
            raise ValueError("store_capacity must be at least 1")


@dataclass
class StepResult:
    rewards: list[float]  # per agent, local to its gateway
    agent_mq: list[float]
    agent_re: list[float]
    mq: float  # farm-wide
    re: float
    delivered: int
    accepted: np.ndarray  # (G, N, A) fusion verdicts for cells that received data
    done: bool
    rounds: list[RoundOutcome] = field(default_factory=list)

    @property
    def reward(self) -> float:
        return self.mq + self.re


class FarmEnv:
    """Farm, sensors, gateways and attacker for one episode at a time.

    Randomness is split into independent streams (world, batteries, threat) so
    that agent behaviour never changes the animals' trajectories and a
    disabled threat model leaves every other stream untouched.
    """

    def __init__(self, farm: FarmConfig = FarmConfig(), energy: EnergyPolicy = EnergyPolicy(),
                 threat: ThreatConfig | None = ThreatConfig(), fusion: FusionConfig = FusionConfig(),
                 tau: float = 0.05, initial_rho: float = 0.5, history_window: int = 10,
                 boundaries: ClassBoundaries = DEFAULT_BOUNDARIES, vital_params=None) -> None:
        self.farm = farm
        self.energy = energy
        self.threat = threat
        self.fusion = fusion
        self.tau = tau
        self.initial_rho = initial_rho
        self.history_window = history_window
        self.boundaries = boundaries
        self.vital_params = vital_params
        self.want_aed = False
        self.record_trace = False
        self.world = None

    @property
    def num_agents(self) -> int:
        return self.farm.num_gateways

    @property
    def obs_dim(self) -> int:
        return 5 * self.farm.num_animals + 1

    def reset(self, seed) -> list[AgentView]:
        """Start an episode; ``seed`` is anything SeedSequence accepts (an int or a list of ints)."""
        ss = np.random.SeedSequence(seed)
        world_ss, battery_ss, threat_ss = ss.spawn(3)
        self.world_rng = np.random.default_rng(world_ss)
        cfg = self.farm
        n = cfg.num_animals
        self.world = init_world(cfg, self.world_rng, self.vital_params)
        self.world.classes = classify_vitals(self.world.vitals, self.boundaries)
        brng = np.random.default_rng(battery_ss)
        levels = brng.uniform(*cfg.les_battery_range, size=n) if cfg.les_battery_range[1] > cfg.les_battery_range[0] \
            else np.full(n, cfg.les_battery_range[0])
        hes = brng.choice(n, size=cfg.num_hes, replace=False) if cfg.num_hes else np.array([], dtype=int)
        levels[hes] = 1.0
        self.ledgers = [EnergyLedger(float(b), self.energy.capacity_j) for b in levels]
        self.stores = [SensorStore(self.fusion.store_capacity) for _ in range(n)]
        self.bank = OpinionBank(cfg.num_gateways, n, self.fusion.prior_weight, self.fusion.decay,
                                self.fusion.phi, self.fusion.peer_u_max)
        self.rho = [RhoPolicy(self.initial_rho, self.tau) for _ in range(cfg.num_gateways)]
        self.threat_ctx = None
        if self.threat is not None:
            self.threat_ctx = ThreatContext(self.threat, n, np.random.default_rng(threat_ss), cfg.ble_range_m,
                                            cfg.upload_interval_s)
        self.gt = GroundTruthLog()
        self.history: list[list[tuple[float, float]]] = [[] for _ in range(cfg.num_gateways)]
        self.step_index = 0
        self.trace: list[dict] = []
        self.cum_delivered = 0
        return self.views()

    # -- observation -----------------------------------------------------------

    def battery_levels(self) -> np.ndarray:
        return np.array([led.battery_norm for led in self.ledgers])

    def _hes_mask(self, levels: np.ndarray) -> np.ndarray:
        return (levels > 0.0) & (levels > self.energy.l_bl)

    def observations(self, owner: np.ndarray | None = None) -> np.ndarray:
        """(G, 5N + 1): per animal [battery, P_temp (3), u_temp] if covered, else zeros; then rho."""
        owner = nearest_gateway(self.world) if owner is None else owner
        g_count, n = self.farm.num_gateways, self.farm.num_animals
        p = self.bank.projected()[:, :, 0, :]
        u = self.bank.u[:, :, 0]
        feats = np.empty((g_count, n, 5))
        feats[:, :, 0] = self.battery_levels()[None, :]
        feats[:, :, 1:4] = p
        feats[:, :, 4] = u
        feats *= (owner[None, :] == np.arange(g_count)[:, None])[:, :, None]
        rho = np.array([r.rho for r in self.rho])
        return np.concatenate([feats.reshape(g_count, 5 * n), rho[:, None]], axis=1)

    def views(self) -> list[AgentView]:
        owner = nearest_gateway(self.world)
        obs = self.observations(owner)
        levels = self.battery_levels()
        hes = self._hes_mask(levels)
        pos = self.world.positions
        hes_idx = np.flatnonzero(hes)
        if len(hes_idx):
            dist = np.hypot(pos[:, None, 0] - pos[None, hes_idx, 0], pos[:, None, 1] - pos[None, hes_idx, 1])
            # distance to the nearest HES other than oneself
            dist[hes_idx, np.arange(len(hes_idx))] = np.inf
            near = dist.min(axis=1)
        else:
            near = np.full(len(pos), np.inf)
        in_range = near <= self.farm.ble_range_m
        rounds = self.farm.rounds_per_decision
        t_u = self.farm.upload_interval_s
        # normalized extra drain of one LES that transmits for a whole decision interval
        per_les = rounds * ((self.energy.active_w - self.energy.sleep_w) * t_u
                            + transmit_cost(BLE, self.energy.packet_bits)) / self.energy.capacity_j
        out = []
        for g in range(self.farm.num_gateways):
            covered = owner == g
            les_g = covered & ~hes
            n_cov = int(covered.sum())
            mq_gain = float((les_g & in_range).sum()) / n_cov if n_cov else 0.0
            re_cost = per_les * self.history_window
            aed = None
            if self.want_aed:
                aed = self._aed_scores(g, les_g, levels, near, per_les, max(n_cov, 1))
            out.append(AgentView(obs[g], self.rho[g].rho, self.tau, list(self.history[g]), mq_gain, re_cost, aed))
        return out

    def _aed_scores(self, g: int, les_g: np.ndarray, levels: np.ndarray, near: np.ndarray, per_les: float,
                    n_cov: int) -> np.ndarray:
        ids = np.flatnonzero(les_g)
        covered = {int(i): levels[i] for i in ids}
        scores = np.empty(len(Action))
        reach = np.minimum(near, self.farm.ble_range_m)
        for a in Action:
            pick = select_transmitters(covered, apply_action(self.rho[g], a).rho)
            after = levels[ids].copy()
            if pick:
                after[np.searchsorted(ids, pick)] -= per_les
            re = float(np.clip(after, 0.0, 1.0).mean()) if len(ids) else 1.0
            dist = float(reach[pick].sum()) / (self.farm.ble_range_m * n_cov) if pick else 0.0
            scores[a] = re - dist
        return scores

    # -- dynamics --------------------------------------------------------------

    def step(self, actions) -> StepResult:
        cfg = self.farm
        n, g_count = cfg.num_animals, cfg.num_gateways
        if len(actions) != g_count:
            raise ValueError(f"expected {g_count} actions, got {len(actions)}")
        self.rho = [apply_action(p, a) for p, a in zip(self.rho, actions)]
        rhos = [p.rho for p in self.rho]

        delivered: list[list] = [[] for _ in range(g_count)]
        outcomes = []
        for _ in range(cfg.rounds_per_decision):
            t = self.world.t
            self.gt.record(t, self.world.classes)
            if self.record_trace:
                self.trace.append({
                    "t": t,
                    "positions": self.world.positions.copy(),
                    "vitals": self.world.vitals.copy(),
                    "classes": self.world.classes.copy(),
                })
            out = execute_round(self.world, self.ledgers, self.stores, rhos, self.threat_ctx, t, self.energy)
            outcomes.append(out)
            for g in range(g_count):
                delivered[g].extend(out.delivered[g])
            step_movement(self.world, cfg.upload_interval_s, self.world_rng)
            sample_all_vitals(self.world, self.world_rng, self.boundaries)

        # fusion: decay, then fold this interval's evidence into each gateway's opinions
        counts = np.zeros((g_count, n, len(ATTRIBUTES), K))
        rec_cls: list[np.ndarray] = []
        for g, recs in enumerate(delivered):
            if recs:
                vals = np.array([(r.temp, r.hb, r.ma) for r in recs])
                cls = classify_vitals(vals, self.boundaries)
                sids = np.array([r.sensor_id for r in recs])
                for j in range(len(ATTRIBUTES)):
                    np.add.at(counts[g, :, j, :], (sids, cls[:, j]), 1)
            else:
                cls = np.zeros((0, 3), dtype=np.int8)
            rec_cls.append(cls)
        self.bank.apply_decay()
        accepted = self.bank.update(counts)

        # freshest accepted record per (animal, attribute), compared with the truth when it was sensed
        got = np.full((n, NUM_VITALS), -1, dtype=np.int8)
        truth = np.full((n, NUM_VITALS), -2, dtype=np.int8)
        rows = [(rec.timestamp_s, g, k) for g, recs in enumerate(delivered) for k, rec in enumerate(recs)]
        if rows:
            ts = np.array([r[0] for r in rows])
            gs = np.array([r[1] for r in rows])
            sids = np.array([delivered[g][k].sensor_id for _, g, k in rows])
            cls = np.concatenate([c for c in rec_cls if len(c)])
            truth_at = np.stack([self.gt.at(t)[sid] for t, sid in zip(ts, sids)])
            # stable order by time: for equal timestamps the lower gateway index wins
            order = np.argsort(-ts, kind="stable")
            for j in range(NUM_VITALS):
                ok = order[accepted[gs[order], sids[order], j]]
                first = np.unique(sids[ok], return_index=True)
                pick = ok[first[1]]
                got[sids[pick], j] = cls[pick, j]
                truth[sids[pick], j] = truth_at[pick, j]
        match = got == truth

        owner = nearest_gateway(self.world)
        levels = self.battery_levels()
        les = ~self._hes_mask(levels)
        mq = float(match.sum()) / (n * NUM_VITALS)
        re = float(levels[les].mean()) if les.any() else 1.0
        agent_mq, agent_re = [], []
        for g in range(g_count):
            cov = owner == g
            n_cov = int(cov.sum())
            agent_mq.append(float(match[cov].sum()) / (n_cov * NUM_VITALS) if n_cov else 0.0)
            les_g = cov & les
            agent_re.append(float(levels[les_g].mean()) if les_g.any() else 1.0)
            self.history[g].append((agent_mq[-1], agent_re[-1]))
            if len(self.history[g]) > self.history_window:
                del self.history[g][0]
        self.step_index += 1
        n_delivered = sum(len(d) for d in delivered)
        self.cum_delivered += n_delivered
        done = self.step_index >= cfg.steps_per_episode
        rewards = [m + r for m, r in zip(agent_mq, agent_re)]
        return StepResult(rewards, agent_mq, agent_re, mq, re, n_delivered, accepted, done, outcomes)
