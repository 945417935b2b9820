"""Decision schemes that steer rho: DT, PPO, DT-guided PPO, transfer-learned PPO and baselines.

Every agent maps an ``AgentView`` (what one gateway can see) to one of the
three rho actions. Learners keep their own network, batch and optimizer; the
environment only hands them rewards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .neural import (
    NUM_ACTIONS,
    Adam,
    CheckpointError,
    PolicyNet,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    softmax_temp,
)
from .protocol import Action, rho_delta
from .threat import AttackType, ThreatConfig, fgsm_perturb, pgd_perturb, trojan_trigger

__all__ = [
    "SCHEMES", "NN_SCHEMES", "DtUtilityConfig", "MixState", "PpoConfig", "AgentsConfig", "TransitionBatch",
    "AgentView", "dt_impact_estimates", "dt_utility", "dt_utilities", "dt_action_distribution", "mix_logits",
    "step_reward", "gae_advantages", "clipped_surrogate", "ppo_loss", "ppo_update", "aed_choice",
    "fe_action", "make_agents", "save_checkpoint", "load_checkpoint", "CheckpointError",
]

SCHEMES = ("DT", "PPO", "DT-PPO", "TL-PPO-FT", "TL-PPO-PT", "AED", "Random", "FE")
NN_SCHEMES = ("PPO", "DT-PPO", "TL-PPO-FT", "TL-PPO-PT")


@dataclass(frozen=True)
class DtUtilityConfig:
    w1: float = 0.5
    w2: float = 0.5
    history_window: int = 10
    dt_temperature: float = 0.01

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError(f"w1 and w2 must be non-negative and sum to 1, got {self.w1}, {self.w2}")
        if self.history_window < 1:
            raise ValueError("history_window must be at least 1")
        if self.dt_temperature <= 0:
            raise ValueError("dt_temperature must be positive")


@dataclass
class MixState:
    """Weight of the DT distribution in the mixed logits, decayed every environment step."""

    w: float = 1.0
    decay: float = 0.0003
    schedule: str = "linear"

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must be in [0, 1], got {self.w}")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.schedule not in ("linear", "exponential"):
            raise ValueError(f"unknown decay schedule {self.schedule!r}")

    def step(self) -> None:
        if self.schedule == "linear":
            self.w = max(0.0, self.w - self.decay)
        else:
            self.w *= 1.0 - self.decay


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    epochs: int = 4
    gae_lambda: float = 0.95
    gamma: float = 0.9
    lr: float = 8e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    batch_size: int = 500
    minibatch_size: int = 125

    def __post_init__(self) -> None:
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.minibatch_size < 1:
            raise ValueError("epochs, batch_size and minibatch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class AgentsConfig:
    tau: float = 0.05
    initial_rho: float = 0.5
    fe_target: float = 0.3
    hidden: tuple[int, ...] = (64, 64)
    mix_decay: float = 0.0003
    mix_schedule: str = "linear"
    pretrain_episodes: int = 200
    dt: DtUtilityConfig = field(default_factory=DtUtilityConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.initial_rho <= 1.0:
            raise ValueError(f"initial_rho must be in [0, 1], got {self.initial_rho}")
        if not 0.0 <= self.fe_target <= 1.0:
            raise ValueError(f"fe_target must be in [0, 1], got {self.fe_target}")
        if self.pretrain_episodes < 0:
            raise ValueError("pretrain_episodes must be non-negative")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}")


# -- decision-theoretic pieces -------------------------------------------------

def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def dt_impact_estimates(history: Sequence[tuple[float, float]], action: Action | int, window: int = 10,
                        tau: float = 0.05, rho: float | None = None, mq_gain: float = 1.0,
                        re_cost: float = 1.0) -> tuple[float, float]:
    """Predicted (MQ, RE) after ``action`` from the recent (mq, re) history.

    The shift is the rho change the action causes (after clamping, when the
    current ``rho`` is given), scaled by ``mq_gain`` for quality and by
    ``re_cost`` for energy. An empty history uses 0.5 for both.
    """
    recent = list(history)[-window:]
    if recent:
        mq = sum(h[0] for h in recent) / len(recent)
        re = sum(h[1] for h in recent) / len(recent)
    else:
        mq = re = 0.5
    d = rho_delta(action, tau)
    if rho is not None:
        d = _clamp01(rho + d) - rho
    return _clamp01(mq + mq_gain * d), _clamp01(re - re_cost * d)


def dt_utility(config: DtUtilityConfig, a_hat: float, e_hat: float) -> float:
    return config.w1 * a_hat + config.w2 * e_hat


def dt_action_distribution(utilities: np.ndarray, temperature: float) -> np.ndarray:
    return softmax_temp(np.asarray(utilities, dtype=float), temperature)


def mix_logits(logits_nn: np.ndarray, prob_dt: np.ndarray, mix: MixState) -> np.ndarray:
    """softmax(logits_nn + w * prob_dt), then decay w by one step."""
    probs = softmax_temp(np.asarray(logits_nn, dtype=float) + mix.w * np.asarray(prob_dt, dtype=float), 1.0)
    mix.step()
    return probs


def step_reward(mq_t: float, re_t: float) -> float:
    return mq_t + re_t


# -- PPO -----------------------------------------------------------------------

class TransitionBatch:
    def __init__(self, capacity: int = 500) -> None:
        self.capacity = capacity
        self.clear()

    def clear(self) -> None:
        self.obs: list[np.ndarray] = []
        self.actions: list[int] = []
        self.logps: list[float] = []
        self.rewards: list[float] = []
        self.values: list[float] = []
        self.dones: list[bool] = []
        self.offsets: list[np.ndarray] = []  # logit shift the behaviour policy added to the net

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, obs, action, logp, reward, value, done, offset=None) -> None:
        if self.full:
            raise ValueError("batch is full")
        self.obs.append(np.asarray(obs, dtype=float))
        self.actions.append(int(action))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.offsets.append(np.zeros(NUM_ACTIONS) if offset is None else np.asarray(offset, dtype=float))


def gae_advantages(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
                   gamma: float = 0.9, lam: float = 0.95, last_value: float = 0.0,
                   normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and the matching value targets.

    ``dones[t]`` marks that step t ended an episode, so nothing bootstraps
    across it. ``last_value`` bootstraps the step after the batch.
    Returns ``(advantages, returns)``; returns use the raw advantages.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    done = np.asarray(dones, dtype=bool)
    n = len(r)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_v = last_value if t == n - 1 else v[t + 1]
        live = 0.0 if done[t] else 1.0
        delta = r[t] + gamma * next_v * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    returns = adv + v
    if normalize and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def clipped_surrogate(ratio, advantage, clip: float = 0.2):
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)


def ppo_loss(net: PolicyNet, obs: np.ndarray, actions: np.ndarray, old_logp: np.ndarray, adv: np.ndarray,
             returns: np.ndarray, offsets: np.ndarray, config: PpoConfig) -> tuple[float, np.ndarray]:
    """Clipped-surrogate loss (to minimize) and its parameter gradient."""
    out = net.forward_raw(obs)
    b = len(actions)
    logits = out[:, :NUM_ACTIONS] + offsets
    value = out[:, NUM_ACTIONS]
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    idx = np.arange(b)
    ratio = np.exp(logp_all[idx, actions] - old_logp)
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    entropy = -(p * logp_all).sum(axis=1)
    loss = -surr.mean() + config.value_coef * ((value - returns) ** 2).mean() - config.entropy_coef * entropy.mean()

    # d surr / d logp_a is ratio * adv where the unclipped branch is the minimum, else 0
    live = ratio * adv <= clipped * adv
    g_logp = np.where(live, ratio * adv, 0.0)
    onehot = np.zeros_like(p)
    onehot[idx, actions] = 1.0
    g_logits = -(g_logp[:, None] * (onehot - p)) / b
    g_entropy = -p * (logp_all + entropy[:, None])
    g_logits -= config.entropy_coef * g_entropy / b
    g_out = np.zeros_like(out)
    g_out[:, :NUM_ACTIONS] = g_logits
    g_out[:, NUM_ACTIONS] = config.value_coef * 2.0 * (value - returns) / b
    return float(loss), net.backward(g_out).params


def ppo_update(net: PolicyNet, batch: TransitionBatch, config: PpoConfig = PpoConfig(),
               optimizer: Adam | None = None, rng: np.random.Generator | None = None,
               last_value: float = 0.0) -> PolicyNet:
    """Several epochs of minibatch Adam steps on the clipped surrogate (in place)."""
    if len(batch) == 0:
        return net
    rng = np.random.default_rng(0) if rng is None else rng
    opt = optimizer if optimizer is not None else Adam(net.n_params, config.lr)
    adv, returns = gae_advantages(batch.rewards, batch.values, batch.dones, config.gamma, config.gae_lambda,
                                  last_value)
    obs = np.stack(batch.obs)
    actions = np.asarray(batch.actions)
    old_logp = np.asarray(batch.logps)
    offsets = np.stack(batch.offsets)
    n = len(actions)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = order[start:start + config.minibatch_size]
            _, grad = ppo_loss(net, obs[mb], actions[mb], old_logp[mb], adv[mb], returns[mb], offsets[mb], config)
            opt.step(net.params, grad)
    return net


# -- agents --------------------------------------------------------------------

@dataclass
class AgentView:
    """Everything one gateway's agent may look at when choosing an action."""

    obs: np.ndarray
    rho: float
    tau: float
    history: Sequence[tuple[float, float]]
    mq_gain: float = 1.0
    re_cost: float = 1.0
    aed_scores: np.ndarray | None = None


def dt_utilities(view: AgentView, config: DtUtilityConfig) -> np.ndarray:
    return np.array([
        dt_utility(config, *dt_impact_estimates(view.history, a, config.history_window, view.tau, view.rho,
                                                view.mq_gain, view.re_cost))
        for a in Action
    ])


def aed_choice(predicted_re: Sequence[float], distances: Sequence[Sequence[float]]) -> int:
    """Action maximizing predicted RE minus the summed LES-to-HES distance of its selection."""
    scores = [re - float(np.sum(d)) for re, d in zip(predicted_re, distances)]
    return int(np.argmax(scores))


def fe_action(rho: float, tau: float, target: float = 0.3) -> Action:
    if abs(rho - target) < tau / 2:
        return Action.STAY
    return Action.DECREASE if rho > target else Action.INCREASE


class Agent:
    scheme = "base"
    uses_network = False

    def act(self, view: AgentView, rng: np.random.Generator, attack: AttackType | None = None,
            attack_rng: np.random.Generator | None = None) -> int:
        raise NotImplementedError

    def observe(self, reward: float, done: bool) -> None:
        pass


class RandomAgent(Agent):
    scheme = "Random"

    def act(self, view, rng, attack=None, attack_rng=None) -> int:
        return int(rng.integers(NUM_ACTIONS))


class FixedEnergyAgent(Agent):
    scheme = "FE"

    def __init__(self, target: float = 0.3) -> None:
        self.target = target

    def act(self, view, rng, attack=None, attack_rng=None) -> int:
        return int(fe_action(view.rho, view.tau, self.target))


class AedAgent(Agent):
    scheme = "AED"

    def act(self, view, rng, attack=None, attack_rng=None) -> int:
        if view.aed_scores is None:
            raise ValueError("AED needs per-action scores in the view")
        scores = np.asarray(view.aed_scores)
        # when moving rho does not change the selection, keep it
        if scores[Action.STAY] >= scores.max() - 1e-12:
            return int(Action.STAY)
        return int(np.argmax(scores))


class DtAgent(Agent):
    scheme = "DT"

    def __init__(self, config: DtUtilityConfig = DtUtilityConfig()) -> None:
        self.config = config

    def act(self, view, rng, attack=None, attack_rng=None) -> int:
        return int(np.argmax(dt_utilities(view, self.config)))


class PpoAgent(Agent):
    """Independent PPO learner; with a ``MixState`` it becomes DT-guided PPO."""

    uses_network = True

    def __init__(self, net: PolicyNet, config: PpoConfig = PpoConfig(), mix: MixState | None = None,
                 dt_config: DtUtilityConfig = DtUtilityConfig(), threat: ThreatConfig = ThreatConfig(),
                 seed: int = 0, scheme: str = "PPO") -> None:
        self.net = net
        self.config = config
        self.mix = mix
        self.dt_config = dt_config
        self.threat = threat
        self.scheme = scheme
        self.optimizer = Adam(net.n_params, config.lr)
        self.batch = TransitionBatch(config.batch_size)
        self.rng = np.random.default_rng(seed)
        self.training_steps = 0
        self._pending: tuple | None = None

    def _update(self, last_value: float) -> None:
        ppo_update(self.net, self.batch, self.config, self.optimizer, self.rng, last_value)
        self.batch.clear()

    def act(self, view, rng, attack=None, attack_rng=None) -> int:
        x = np.asarray(view.obs, dtype=float)
        if attack is AttackType.FGSM:
            x = fgsm_perturb(x, self.net, self.threat.fgsm_eps)
        elif attack is AttackType.PGD:
            x = pgd_perturb(x, self.net, self.threat.fgsm_eps, self.threat.pgd_alpha, self.threat.pgd_steps)
        logits, value = self.net.forward(x)
        if self.batch.full:
            self._update(float(value))
            logits, value = self.net.forward(x)
        offset = np.zeros(NUM_ACTIONS)
        if attack is AttackType.TROJAN:
            swapped = trojan_trigger(logits, attack_rng if attack_rng is not None else rng)
            offset += swapped - logits
        if self.mix is not None:
            prob_dt = dt_action_distribution(dt_utilities(view, self.dt_config), self.dt_config.dt_temperature)
            w = self.mix.w
            probs = mix_logits(logits + offset, prob_dt, self.mix)
            offset += w * prob_dt
        else:
            probs = softmax_temp(logits + offset)
        a = int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), NUM_ACTIONS - 1))
        self._pending = (x, a, float(np.log(probs[a])), float(value), offset)
        return a

    def observe(self, reward: float, done: bool) -> None:
        if self._pending is None:
            raise RuntimeError("observe called before act")
        x, a, logp, value, offset = self._pending
        self._pending = None
        self.batch.add(x, a, logp, reward, value, done, offset)
        self.training_steps += 1
        if done and self.batch.full:
            self._update(0.0)

    def checkpoint(self) -> bytes:
        return save_checkpoint(self.net, {"training_steps": self.training_steps, "scheme": self.scheme})


def make_agents(scheme: str, num_agents: int, obs_dim: int, seed: int, config: AgentsConfig = AgentsConfig(),
                threat: ThreatConfig = ThreatConfig(), pretrained: bytes | None = None) -> list[Agent]:
    """Build one agent per gateway. TL schemes need ``pretrained`` checkpoint bytes."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    if scheme == "Random":
        return [RandomAgent() for _ in range(num_agents)]
    if scheme == "FE":
        return [FixedEnergyAgent(config.fe_target) for _ in range(num_agents)]
    if scheme == "AED":
        return [AedAgent() for _ in range(num_agents)]
    if scheme == "DT":
        return [DtAgent(config.dt) for _ in range(num_agents)]
    if scheme.startswith("TL") and pretrained is None:
        raise ValueError(f"{scheme} needs a pretrained checkpoint")
    sizes = (obs_dim, *config.hidden, NUM_ACTIONS + 1)
    seeds = np.random.SeedSequence(seed).spawn(2 * num_agents)
    agents: list[Agent] = []
    for k in range(num_agents):
        net_seed = int(seeds[2 * k].generate_state(1)[0])
        net = PolicyNet(sizes, seed=net_seed)
        if scheme == "TL-PPO-FT":
            net = load_checkpoint(pretrained, "full", target=net)
        elif scheme == "TL-PPO-PT":
            net = load_checkpoint(pretrained, "partial", target=net)
        mix = MixState(1.0, config.mix_decay, config.mix_schedule) if scheme == "DT-PPO" else None
        agents.append(PpoAgent(net, config.ppo, mix, config.dt, threat,
                               int(seeds[2 * k + 1].generate_state(1)[0]), scheme))
    return agents
