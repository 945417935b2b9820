import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartfarm.energy import BLE, EnergyLedger, EnergyPolicy, classify_nodes, transmit_cost
from smartfarm.fusion import classify_vitals
from smartfarm.neural import PolicyNet
from smartfarm.protocol import SensorRecord
from smartfarm.threat import (
    AttackType,
    Disposition,
    ThreatConfig,
    ThreatContext,
    TransferEvent,
    action_loss,
    compromise_init,
    dos_flood,
    fgsm_perturb,
    greedy_action,
    inject_false_data,
    non_compliance,
    pgd_perturb,
    trojan_trigger,
)


def honest(sid=0, t=0.0):
    return SensorRecord(sid, t, 38.5, 66.0, 0.5, 0.9)


def test_compromise_examples():
    rng = np.random.default_rng(0)
    assert len(compromise_init(20, 0.3, rng)) == 6
    assert compromise_init(20, 0.0, rng) == frozenset()
    assert compromise_init(20, 0.3, np.random.default_rng(5)) == compromise_init(20, 0.3, np.random.default_rng(5))


@given(st.integers(1, 200), st.floats(0, 1))
def test_compromise_size(n, f):
    s = compromise_init(n, f, np.random.default_rng(0))
    assert len(s) == int(np.floor(f * n + 1e-9)) and s <= set(range(n))


def test_false_data_out_of_band():
    rng = np.random.default_rng(1)
    classes = []
    for _ in range(1000):
        r = inject_false_data(honest(), rng)
        assert r.tampered and not 37.8 <= r.temp <= 39.2
        classes.append(classify_vitals(np.array([r.temp, r.hb, r.ma])))
    classes = np.array(classes)
    # every injected reading lands in class 0 or 2, never normal
    assert not (classes == 1).any()
    assert (classes == 0).mean() > 0.2 and (classes == 2).mean() > 0.2


def test_zero_p_a_leaves_records_alone():
    ctx = ThreatContext(ThreatConfig(p_a=0.0), 20, 0)
    pos = np.zeros((20, 2))
    for k in range(50):
        assert ctx.begin_round(30.0 * k, pos, np.ones(20, bool), np.ones(20, bool),
                               [EnergyLedger(1.0, 5000.0)] * 20, EnergyPolicy()) == {}
    assert ctx.log == []


def test_non_compliance_examples():
    rng = np.random.default_rng(0)
    rec = honest(3)
    assert non_compliance(TransferEvent(3, False, rec, True), rng) == (Disposition.DROP, None)
    assert non_compliance(TransferEvent(3, True, rec, False), rng) == (Disposition.DELIVER, rec)
    seen = set()
    for _ in range(100):
        verdict, sent = non_compliance(TransferEvent(7, True, rec, True, (honest(7), honest(3))), rng)
        seen.add(verdict)
        if verdict is Disposition.SUBSTITUTE:
            assert sent.sensor_id != rec.sensor_id
    assert seen == {Disposition.DROP, Disposition.SUBSTITUTE}


def test_dos_examples():
    led = EnergyLedger(0.5, 100.0)
    assert dos_flood(led, 0) == led
    out = dos_flood(led, 5)
    assert out.consumed_ss_j == pytest.approx(5 * 256 * 5.5e-9, rel=1e-12)


def test_repeated_floods_demote_hes():
    led = EnergyLedger(0.31, 1e-3)
    policy = EnergyPolicy()
    for _ in range(10_000):
        if classify_nodes([led], policy.l_bl)[1]:
            break
        led = dos_flood(led, 5, policy)
    assert classify_nodes([led], policy.l_bl) == (set(), {0})


def test_fgsm_examples():
    net = PolicyNet.for_observation(6, seed=0)
    x = np.random.default_rng(0).normal(size=6)
    np.testing.assert_array_equal(fgsm_perturb(x, net, 0.0), x)
    out = fgsm_perturb(x, net, 0.1)
    assert np.max(np.abs(out - x)) <= 0.1 + 1e-15


def test_fgsm_sign_rule_on_scalar_net():
    # logits (z, 0, 0) with z = x: greedy action 0 for x > 0; its loss falls as x grows,
    # so the ascent direction is -1. Mirror the weight to get +1.
    w = np.array([[-1.0, 0.0, 0.0, 0.0]])
    net = PolicyNet((1, 4), params=np.concatenate([w.ravel(), np.zeros(4)]))
    x = np.array([-2.0])  # logit +2 on action 0
    assert greedy_action(net, x) == 0
    np.testing.assert_allclose(fgsm_perturb(x, net, 0.25), x + 0.25)


def test_fgsm_usually_raises_loss():
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = PolicyNet((8, 16, 4), seed=seed)
        net.params[:] = rng.normal(0, 0.5, net.n_params)
        x = rng.normal(size=8)
        a = greedy_action(net, x)
        wins += action_loss(net, fgsm_perturb(x, net, 0.1), a) >= action_loss(net, x, a)
    assert wins >= 80


def test_pgd_matches_fgsm_for_one_step():
    net = PolicyNet.for_observation(6, seed=2)
    x = np.random.default_rng(2).normal(size=6)
    np.testing.assert_allclose(pgd_perturb(x, net, 0.1, 0.1, 1), fgsm_perturb(x, net, 0.1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 0.5), st.floats(1e-3, 0.2), st.integers(1, 12))
def test_pgd_iterates_inside_ball(seed, eps, alpha, steps):
    net = PolicyNet((5, 8, 4), seed=seed)
    x0 = np.random.default_rng(seed).normal(size=5)
    trace = []
    pgd_perturb(x0, net, eps, alpha, steps, trace)
    assert len(trace) == steps
    for x in trace:
        assert np.max(np.abs(x - x0)) <= eps + 1e-12


def test_pgd_at_least_as_strong_as_fgsm():
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = PolicyNet((8, 16, 4), seed=seed)
        net.params[:] = rng.normal(0, 0.5, net.n_params)
        x = rng.normal(size=8)
        a = greedy_action(net, x)
        wins += action_loss(net, pgd_perturb(x, net, 0.1, 0.01, 10), a) >= action_loss(net, fgsm_perturb(x, net, 0.1), a) - 1e-12
    assert wins >= 70


def test_trojan_examples():
    class Fixed:
        def integers(self, n):
            return 1  # second of the non-argmax indices, i.e. index 2

    np.testing.assert_array_equal(trojan_trigger(np.array([3.0, 1.0, 0.0]), Fixed()), [0, 1, 3])
    out = trojan_trigger(np.zeros(3), np.random.default_rng(0))
    np.testing.assert_array_equal(np.sort(out), np.zeros(3))


def test_gateway_gate_off_at_zero():
    ctx = ThreatContext(ThreatConfig(p_ae=0.0), 20, 0)
    assert all(ctx.gateway_attack(0.0, g) is None for g in range(1000))


def test_sensor_attack_frequency_within_three_sigma():
    p, rounds, n = 0.3, 3000, 20
    ctx = ThreatContext(ThreatConfig(p_a=p, obstruct_duration_rounds=1), n, 7)
    pos = np.zeros((n, 2))
    no_hes = np.zeros(n, bool)
    ledgers = [EnergyLedger(0.1, 5000.0) for _ in range(n)]
    for k in range(rounds):
        ctx.begin_round(30.0 * k, pos, no_hes, np.ones(n, bool), ledgers, EnergyPolicy())
    targets = [e.target_id for e in ctx.log]
    assert set(targets) <= ctx.compromised
    sigma = np.sqrt(rounds * p * (1 - p))
    for sid in ctx.compromised:
        assert abs(targets.count(sid) - rounds * p) <= 3 * sigma
    kinds = {e.attack_type for e in ctx.log}
    assert kinds == {"false_data", "non_compliance", "obstruct"}


def test_dos_hits_hes_in_range():
    n = 10
    ctx = ThreatContext(ThreatConfig(p_a=1.0, compromised_fraction=0.1), n, 3)
    (attacker,) = ctx.compromised
    pos = np.full((n, 2), 1000.0)
    pos[attacker] = 0.0
    victim = (attacker + 1) % n
    pos[victim] = [10.0, 0.0]
    hes = np.zeros(n, bool)
    hes[victim] = True
    ledgers = [EnergyLedger(1.0, 5000.0) for _ in range(n)]
    for k in range(200):
        ctx.begin_round(30.0 * k, pos, hes, np.ones(n, bool), ledgers, EnergyPolicy())
    dos = [e for e in ctx.log if e.attack_type == AttackType.DOS.value]
    assert dos and all(e.target_id == victim for e in dos)
    assert ledgers[victim].consumed_ss_j == pytest.approx(len(dos) * 5 * transmit_cost(BLE, 256))


def test_gateway_attack_frequency():
    p, draws = 0.2, 5000
    ctx = ThreatContext(ThreatConfig(p_ae=p), 20, 11)
    fired = [ctx.gateway_attack(0.0, 0) for _ in range(draws)]
    hits = sum(f is not None for f in fired)
    assert abs(hits - draws * p) <= 3 * np.sqrt(draws * p * (1 - p))
    assert {f for f in fired if f} == {AttackType.TROJAN, AttackType.FGSM, AttackType.PGD}


@pytest.mark.parametrize("kwargs", [{"p_a": 1.5}, {"p_ae": -0.1}, {"fgsm_eps": 0.0}, {"pgd_steps": 0}])
def test_threat_config_invariants(kwargs):
    with pytest.raises(ValueError):
        ThreatConfig(**kwargs)
