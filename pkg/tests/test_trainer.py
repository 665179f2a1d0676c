import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from dsmdp.policy import PolicyParams, WorldConfig
from dsmdp.trainer import (
    WORKED_INIT,
    TrainConfig,
    TrainingDiverged,
    dominant_period,
    group_seed,
    summarize,
    train,
)

SHORT = TrainConfig(steps=120, ref_refresh_interval=30, world=WorldConfig(max_attempts=6))


@pytest.fixture(scope="module")
def trace():
    return train(SHORT)


def test_bit_identical_replay(trace):
    again = train(SHORT)
    assert trace.rows() == again.rows()


def test_seed_changes_the_run(trace):
    other = train(dataclasses.replace(SHORT, seed=1))
    assert trace.rows() != other.rows()


def test_record_count_and_order(trace):
    steps = [r.step for r in trace.records]
    assert steps == list(range(1, SHORT.steps + 1))


def test_first_step_uses_init_and_reference(trace):
    first = trace.records[0]
    assert first.params == WORKED_INIT
    assert first.ref == SHORT.ref_init


def test_reference_refresh_schedule(trace):
    for prev, cur in zip(trace.records, trace.records[1:]):
        if prev.step % SHORT.ref_refresh_interval == 0:
            assert cur.ref == cur.params
        else:
            assert cur.ref == prev.ref


def test_update_is_plain_ascent_on_net(trace):
    for prev, cur in zip(trace.records, trace.records[1:]):
        expected = prev.params.as_array() + SHORT.learning_rate * prev.gradients.net.as_array()
        assert np.array_equal(cur.params.as_array(), expected)


def test_kl_vanishes_right_after_refresh(trace):
    for r in trace.records:
        if r.ref == r.params:
            assert np.all(r.gradients.kl.as_array() == 0)


def test_group_seed_is_distinct_per_member():
    seeds = {tuple(group_seed(0, s, i)) for s in range(3) for i in range(4)}
    assert len(seeds) == 12


def test_csv_and_json_outputs(trace, tmp_path):
    trace.write_csv(tmp_path / "t.csv")
    raw = (tmp_path / "t.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert len(rows) == SHORT.steps
    header = list(rows[0])
    assert header[:4] == ["step", "theta_s", "theta_d_c", "theta_d_w"]
    for col in ("ref_theta_s", "p_correct", "net_d_theta_d_w", "kl_ratio", "reward_balanced", "mean_reward"):
        assert col in header
    trace.write_json(tmp_path / "t.json")
    assert json.loads((tmp_path / "t.json").read_text())[5]["step"] == 6


def test_summary(trace):
    s = summarize(trace)
    assert s.steps == SHORT.steps
    assert s.final_params == trace.records[-1].params
    assert set(s.mean_ratio) == {"reward", "kl", "net"}
    json.dumps(s.to_json())


def test_divergence_keeps_the_partial_trace():
    cfg = TrainConfig(steps=50, learning_rate=1e308, kl_weight=100.0, world=WorldConfig(max_attempts=4))
    with pytest.raises(TrainingDiverged) as info:
        train(cfg)
    assert 1 <= len(info.value.trace) < 50


@pytest.mark.parametrize("kwargs", [{"steps": 0}, {"learning_rate": -1.0}, {"group_size": 1},
                                    {"ref_refresh_interval": 0}, {"kl_weight": math.nan}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


@pytest.mark.parametrize("period", [20, 37, 50, 80])
def test_period_detector_on_synthetic_sawtooth(period):
    rng = np.random.default_rng(period)
    n = 2000
    t = np.arange(n)
    phase = t % period
    series = (0.01 + phase / period) * np.exp(rng.normal(0, 0.3, n)) * (1 + t / n)
    assert dominant_period(series) == period


def test_period_detector_degenerate_inputs():
    assert dominant_period(np.zeros(100)) is None
    assert dominant_period(np.ones(6)) is None


def test_attribution_time_series_at_length_eight():
    s = summarize(train(TrainConfig(steps=400)))
    assert s.mean_ratio["reward"] <= 2.0
    assert s.mean_ratio["kl"] > 2.0
