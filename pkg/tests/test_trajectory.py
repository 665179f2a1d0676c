import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import oracle_path_prob, oracle_paths
from dsmdp.policy import Decision, Outcome, PolicyParams, WorldConfig, action_probs
from dsmdp.trajectory import (
    Step,
    Trajectory,
    check_horizon,
    enumerate_trajectories,
    grad_log_prob,
    log_prob,
    read_jsonl,
    sample_batch,
    sample_trajectory,
    step_log_probs,
    write_jsonl,
)

logits = st.floats(-4, 4, allow_nan=False)
params_st = st.builds(PolicyParams, logits, logits, logits)


def random_trajectory(rng, max_attempts):
    depth = int(rng.integers(1, max_attempts + 1))
    outcomes = "".join(rng.choice(["C", "W"], depth))
    text = " ".join(o + "R" for o in outcomes[:-1]) + (" " if depth > 1 else "") + outcomes[-1] + "S"
    truncated = depth == max_attempts and bool(rng.integers(2))
    return Trajectory.from_string(text, truncated)


def test_factorization_over_random_pairs(rng):
    for _ in range(1000):
        p = PolicyParams(*rng.uniform(-4, 4, 3))
        t = random_trajectory(rng, 6)
        a = action_probs(p)
        manual = 0.0
        for step, d in zip(t.steps, t.policy_decisions()):
            manual += math.log(a.p_correct if step.outcome is Outcome.CORRECT else a.p_wrong)
            if step.outcome is Outcome.CORRECT:
                manual += math.log(a.p_stop_given_c if d is Decision.STOP else a.p_resample_given_c)
            else:
                manual += math.log(a.p_resample_given_w if d is Decision.RESAMPLE else a.p_stop_given_w)
        assert abs(log_prob(t, p) - manual) <= 1e-12
        assert abs(sum(step_log_probs(t, p)) - manual) <= 1e-12


def test_gradient_decomposition_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(100):
        p = PolicyParams(*rng.uniform(-4, 4, 3))
        t = random_trajectory(rng, 5)
        g = grad_log_prob(t, p)
        fd = np.zeros(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (log_prob(t, PolicyParams.from_array(p.as_array() + e))
                     - log_prob(t, PolicyParams.from_array(p.as_array() - e))) / (2 * h)
        np.testing.assert_allclose(g.sampling + g.decision, fd, atol=1e-8)
        assert g.sampling[1] == g.sampling[2] == 0 and g.decision[0] == 0


def test_enumeration_is_complete(rng):
    for _ in range(100):
        p = PolicyParams(*rng.uniform(-4, 4, 3))
        h = int(rng.integers(1, 9))
        total = math.fsum(f.prob(p) for _, f in enumerate_trajectories(WorldConfig(max_attempts=h)))
        assert abs(total - 1) <= 1e-12


def test_enumeration_matches_independent_listing():
    world = WorldConfig(max_attempts=4)
    p = PolicyParams(0.3, -1.1, 0.7)
    ours = {(tuple(s.outcome.value for s in t.steps), t.truncated): f.prob(p) for t, f in enumerate_trajectories(world)}
    theirs = {(tuple(o), tr): oracle_path_prob(p.as_array(), (o, d, tr)) for o, d, tr in oracle_paths(4)}
    assert ours.keys() == theirs.keys()
    for k in ours:
        assert ours[k] == pytest.approx(theirs[k], abs=1e-15)


def test_two_attempt_horizon_path_counts():
    paths = enumerate_trajectories(WorldConfig(max_attempts=2))
    depth2 = [t for t, _ in paths if len(t) == 2]
    assert len(paths) == 10
    assert sum(t.truncated for t in depth2) == 4 and sum(not t.truncated for t in depth2) == 4


@given(params_st, st.integers(0, 2**63 - 1))
def test_sampling_is_a_pure_function_of_the_seed(p, seed):
    world = WorldConfig(max_attempts=5)
    assert sample_trajectory(p, world, seed) == sample_trajectory(p, world, seed)
    t = sample_trajectory(p, world, seed)
    check_horizon(t, world)


def test_sample_batch_frequencies_match_enumeration():
    p = PolicyParams(0.4, 2.2, 1.4)
    world = WorldConfig(max_attempts=3)
    batch = sample_batch(p, world, 200_000, seed=3)
    counts = {}
    for t in batch:
        counts[t] = counts.get(t, 0) + 1
    for t, f in enumerate_trajectories(world):
        q = f.prob(p)
        se = math.sqrt(q * (1 - q) / len(batch))
        assert abs(counts.get(t, 0) / len(batch) - q) < 5 * se + 1e-12


def test_truncation_is_flagged_and_forced():
    p = PolicyParams(0.0, -20.0, 20.0)  # never stops on its own
    t = sample_trajectory(p, WorldConfig(max_attempts=3), 0)
    assert t.truncated and len(t) == 3
    assert t.steps[-1].decision is Decision.STOP
    assert t.policy_decisions() == [Decision.RESAMPLE] * 3


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(())
    with pytest.raises(ValueError):
        Trajectory((Step(Outcome.CORRECT, Decision.RESAMPLE),))
    with pytest.raises(ValueError):
        check_horizon(Trajectory.from_string("CS", truncated=True), WorldConfig(max_attempts=2))


def test_jsonl_round_trip(tmp_path):
    trajs = [Trajectory.from_string("WR CS"), Trajectory.from_string("CR WS", truncated=True)]
    path = tmp_path / "t.jsonl"
    write_jsonl(trajs, path, task="gsm")
    line = path.read_text().splitlines()[0]
    assert json.loads(line) == {"steps": [{"outcome": "W", "decision": "RESAMPLE"},
                                          {"outcome": "C", "decision": "STOP"}],
                                "truncated": False, "task": "gsm"}
    assert read_jsonl(path) == [(t, "gsm") for t in trajs]


def test_jsonl_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"steps":[{"outcome":"C","decision":"STOP"}],"truncated":false}\n{"steps":[{"outcome":"X"}]}\n')
    with pytest.raises(ValueError, match=r"bad.jsonl:2:"):
        read_jsonl(path)
