import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smartfarm.fusion import (
    EvidenceCounts,
    Opinion,
    OpinionBank,
    Verdict,
    classify,
    deception_filter,
    mean_peer_distance,
    opinion_from_evidence,
    projected_distance,
    projected_probability,
    uncertainty_maximize,
    update_opinion,
)
from smartfarm.protocol import SensorRecord

A = np.full(3, 1 / 3)
evidence = arrays(np.float64, 3, elements=st.floats(0, 1e3))


@st.composite
def opinions(draw):
    r = draw(evidence)
    w = draw(st.floats(0.1, 10))
    return opinion_from_evidence(EvidenceCounts(r, w))


def test_classify_examples():
    assert classify(38.5, (37.8, 39.2)) == 1
    assert classify(37.8, (37.8, 39.2)) == 1
    assert classify(90, (48, 84)) == 2
    assert classify(37.0, (37.8, 39.2)) == 0


def test_opinion_from_evidence_examples():
    op = opinion_from_evidence(EvidenceCounts(np.zeros(3)))
    assert op.u == 1.0 and not op.b.any()
    op = opinion_from_evidence(EvidenceCounts(np.array([4.0, 0, 0]), 2.0))
    np.testing.assert_allclose(op.b, [2 / 3, 0, 0])
    assert op.u == pytest.approx(1 / 3)


def test_negative_evidence_rejected():
    with pytest.raises(ValueError):
        EvidenceCounts(np.array([-1.0, 0, 0]))


def test_projected_examples():
    np.testing.assert_allclose(projected_probability(Opinion.vacuous()), [1 / 3] * 3)
    p = projected_probability(Opinion(np.array([0.6, 0.2, 0]), 0.2))
    np.testing.assert_allclose(p, [0.6667, 0.2667, 0.0667], atol=1e-4)
    np.testing.assert_array_equal(projected_probability(Opinion(np.array([1.0, 0, 0]), 0.0)), [1, 0, 0])


def test_um_examples():
    op = uncertainty_maximize(Opinion(np.array([0.3, 0.3, 0.3]), 0.1))
    assert op.u == pytest.approx(1.0) and np.allclose(op.b, 0)
    src = Opinion(np.array([0.6, 0.2, 0]), 0.2)
    op = uncertainty_maximize(src)
    np.testing.assert_allclose(op.b, src.b, atol=1e-12)
    assert op.u == pytest.approx(0.2)
    v = uncertainty_maximize(Opinion.vacuous())
    assert v.u == 1.0 and not v.b.any()


def test_um_rejects_zero_base_rate():
    with pytest.raises(ValueError):
        uncertainty_maximize(Opinion(np.array([0.5, 0.0, 0.0]), 0.5, np.array([0.5, 0.5, 0.0])))


def test_update_examples():
    state = {"temp": Opinion.vacuous()}
    assert update_opinion(state, []) == state
    rec = SensorRecord(0, 0.0, 38.5, 60.0, 0.5, 1.0)
    out = update_opinion({}, [rec], w=2.0)
    # one normal record: b=(0,1/3,0), u=2/3, then UM pushes to P/a minimum
    p = np.array([0, 1 / 3, 0]) + A * 2 / 3
    np.testing.assert_allclose(projected_probability(out["temp"]), p)
    assert out["temp"].u == pytest.approx(min(p / A))
    np.testing.assert_allclose(out["temp"].b, p - A * min(p / A), atol=1e-12)


def test_pd_examples():
    op = Opinion(np.array([0.2, 0.3, 0.1]), 0.4)
    assert projected_distance(op, op) == 0.0
    assert projected_distance(Opinion(np.array([1.0, 0, 0]), 0), Opinion(np.array([0, 1.0, 0]), 0)) == 1.0


def test_mean_peer_distance_examples():
    own = Opinion(np.array([1.0, 0, 0]), 0)
    assert mean_peer_distance(own, [own, own]) == 0.0
    p02 = Opinion(np.array([0.8, 0.2, 0]), 0)
    p04 = Opinion(np.array([0.6, 0.4, 0]), 0)
    assert mean_peer_distance(own, [p02, p04]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        mean_peer_distance(own, [])


def test_filter_examples():
    own = Opinion(np.array([0, 1.0, 0]), 0)
    bad = Opinion(np.array([1.0, 0, 0]), 0)
    assert deception_filter(bad, own, [own], 1.0) is Verdict.ACCEPT
    slight = Opinion(np.array([0.01, 0.99, 0]), 0)
    assert deception_filter(slight, own, [own], 0.0) is Verdict.REJECT
    assert deception_filter(own, own, [own], 0.0) is Verdict.ACCEPT


@settings(max_examples=300)
@given(opinions())
def test_additivity_and_um_projection(op):
    assert abs(op.u + op.b.sum() - 1) <= 1e-9
    um = uncertainty_maximize(op)
    assert abs(um.u + um.b.sum() - 1) <= 1e-9
    np.testing.assert_allclose(projected_probability(um), projected_probability(op), atol=1e-9)
    twice = uncertainty_maximize(um)
    np.testing.assert_allclose(twice.b, um.b, atol=1e-9)
    assert abs(twice.u - um.u) <= 1e-9
    assert (um.b == 0).any() or abs(um.u - 1) <= 1e-9
    assert np.all(um.b >= 0) and um.u >= 0


@settings(max_examples=300)
@given(opinions(), opinions(), opinions())
def test_pd_metric_axioms(x, y, z):
    dxy, dyx = projected_distance(x, y), projected_distance(y, x)
    assert 0 <= dxy <= 1 + 1e-12
    assert dxy == dyx
    assert projected_distance(x, x) == 0
    assert projected_distance(x, z) <= dxy + projected_distance(y, z) + 1e-12


@given(st.lists(st.tuples(st.floats(30, 45), st.floats(20, 120), st.floats(0, 1)), max_size=20))
def test_update_keeps_additivity(vals):
    recs = [SensorRecord(0, float(i), t, h, m, 1.0) for i, (t, h, m) in enumerate(vals)]
    out = update_opinion({}, recs)
    for op in out.values():
        assert abs(op.u + op.b.sum() - 1) <= 1e-9
        # dogmatic only if a projected probability vanished
        if op.u == 0:
            assert (projected_probability(op) == 0).any()


def test_bank_matches_scalar_path():
    """Vectorized bank update equals repeated scalar updates when nobody votes."""
    bank = OpinionBank(1, 2, phi=0.5)
    counts = np.zeros((1, 2, 3, 3))
    counts[0, 0, 0, 1] = 1
    counts[0, 1, 2, 0] = 2
    mask = bank.update(counts)
    assert mask[0, 0, 0] and mask[0, 1, 2] and not mask[0, 0, 1]
    expect = uncertainty_maximize(opinion_from_evidence(EvidenceCounts(np.array([0, 1.0, 0]))))
    got = bank.opinion(0, 0, 0)
    np.testing.assert_allclose(got.b, expect.b)
    assert got.u == pytest.approx(expect.u)


def test_bank_rejects_against_informed_peers():
    bank = OpinionBank(2, 1, phi=0.5)
    honest = np.zeros((2, 1, 3, 3))
    honest[:, 0, :, 1] = 20
    bank.update(honest)
    lie = np.zeros((2, 1, 3, 3))
    lie[0, 0, :, 2] = 200
    mask = bank.update(lie)
    assert not mask[0, 0].any()


def test_bank_decay_shrinks_evidence():
    bank = OpinionBank(1, 1, decay=0.5)
    c = np.zeros((1, 1, 3, 3))
    c[..., 1] = 4
    bank.update(c)
    u0 = bank.u.copy()
    bank.apply_decay()
    assert np.all(bank.u > u0)
    np.testing.assert_allclose(bank.u + bank.b.sum(-1), 1.0)
