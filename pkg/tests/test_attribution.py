import csv
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dsmdp.attribution import SWEEP_COLUMNS, attribute, attribution_sweep, write_sweep_csv
from dsmdp.objectives import ObjectiveGradient, Track, expected_surrogate_gradient
from dsmdp.policy import PolicyParams, WorldConfig

finite = st.floats(-1e3, 1e3, allow_nan=False)
grads = st.builds(lambda a, b, c: ObjectiveGradient(a, b, c, Track.KL), finite, finite, finite)

BASE = np.array([0.4, 2.2, 1.4])
REF = PolicyParams(0.3, 2.0, 1.2)


@given(grads, st.floats(1e-3, 1e3), st.sampled_from([1.0, -1.0]))
def test_scale_equivariance(g, k, sign):
    k *= sign
    scaled = ObjectiveGradient.from_array(k * g.as_array(), g.track)
    a, b = attribute(g), attribute(scaled)
    assume(a.decision_magnitude > 1e-100 and b.decision_magnitude > 1e-100)
    assert a.balanced == b.balanced
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


@given(grads)
def test_report_consistency(g):
    r = attribute(g)
    assert r.sampling_magnitude >= 0 and r.decision_magnitude >= 0
    if r.decision_magnitude > 0:
        expected = r.sampling_magnitude / r.decision_magnitude
        assert r.ratio == expected or abs(r.ratio - expected) <= 1e-12 * max(1.0, expected)


def test_degenerate_gradients():
    zero = attribute(ObjectiveGradient(0.0, 0.0, 0.0, Track.KL))
    assert zero.zero_gradient and zero.balanced and zero.ratio == 1.0
    only_s = attribute(ObjectiveGradient(1.0, 0.0, 0.0, Track.KL))
    assert only_s.ratio == math.inf and not only_s.balanced
    only_d = attribute(ObjectiveGradient(0.0, 3.0, 4.0, Track.KL))
    assert only_d.ratio == 0.0 and only_d.decision_magnitude == 5.0 and not only_d.balanced
    with pytest.raises(ValueError):
        attribute(only_d, balance_threshold=1.0)


def test_threshold_is_inclusive():
    assert attribute(ObjectiveGradient(2.0, 1.0, 0.0, Track.KL)).balanced
    assert not attribute(ObjectiveGradient(2.0001, 1.0, 0.0, Track.KL)).balanced


def test_surrogate_balance_near_the_worked_configuration():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = PolicyParams(*(BASE + rng.uniform(-1, 1, 3)))
        assert attribute(expected_surrogate_gradient(p, WorldConfig())).balanced


@pytest.mark.xfail(strict=True, reason="band [1/2, 2] is not met everywhere; see decisions ledger")
def test_surrogate_balance_over_a_wide_box():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = PolicyParams(*rng.uniform(-3, 3, 3))
        assert attribute(expected_surrogate_gradient(p, WorldConfig())).balanced


def _kl_ratios(p, ref, lengths, h=6):
    rows = attribution_sweep(p, ref, WorldConfig(max_attempts=h), lengths)
    return [r.report.ratio for r in rows if r.report.track is Track.KL]


def _reward_ratios(p, ref, lengths, h=6):
    rows = attribution_sweep(p, ref, WorldConfig(max_attempts=h), lengths)
    return [r.report.ratio for r in rows if r.report.track is Track.REWARD]


def test_kl_ratio_grows_with_length_near_the_worked_configuration():
    rng = np.random.default_rng(11)
    for _ in range(25):
        p = PolicyParams(*(BASE + rng.uniform(-0.5, 0.5, 3)))
        ref = PolicyParams(*(BASE + rng.uniform(-0.5, 0.5, 3)))
        k1, k64 = _kl_ratios(p, ref, [1, 64])
        assert k64 > k1


@pytest.mark.xfail(strict=True, reason="decision logits also pick up O(L) KL gradient via attempt counts")
def test_kl_ratio_grows_with_length_for_every_pair():
    k1, k8, k64 = _kl_ratios(PolicyParams(0.3, 0.4, 1.8), PolicyParams(-1.7, 0.0, 1.0), [1, 8, 64])
    assert k64 > k1


def test_kl_ratio_flat_when_only_decisions_differ():
    ks = _kl_ratios(PolicyParams(-0.6, 0.3, 0.1), PolicyParams(-0.6, 0.5, 0.7), [1, 8, 64])
    assert ks[0] == pytest.approx(ks[1], rel=1e-12) == pytest.approx(ks[2], rel=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_surrogate_ratio_does_not_depend_on_length(a, b, c):
    rs = _reward_ratios(PolicyParams(a, b, c), REF, [1, 8, 64], h=4)
    assert rs[0] == pytest.approx(rs[1], rel=1e-12) and rs[0] == pytest.approx(rs[2], rel=1e-12)


def test_sweep_csv(tmp_path):
    rows = attribution_sweep(PolicyParams(*BASE), REF, WorldConfig(max_attempts=4), [1, 8])
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    table = list(csv.reader(raw.decode().splitlines()))
    assert tuple(table[0]) == SWEEP_COLUMNS == ("L", "track", "sampling_magnitude", "decision_magnitude",
                                                "ratio", "balanced")
    assert [r[:2] for r in table[1:]] == [["1", "reward"], ["1", "kl"], ["8", "reward"], ["8", "kl"]]
