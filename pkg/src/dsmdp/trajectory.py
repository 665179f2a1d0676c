"""Trajectories of the retry process: sampling, exact enumeration, log-probabilities.

A trajectory is a list of (outcome, decision) steps. Every step but the last
resamples; the last one stops. When the horizon is reached with a RESAMPLE
decision the recorded decision is forced to STOP and ``truncated`` is set.
The policy really chose RESAMPLE there, so that factor stays in the
probability and the forced STOP contributes nothing.

Random draws use numpy's PCG64 generator (``numpy.random.default_rng``).
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .policy import (
    Decision,
    Outcome,
    PolicyParams,
    WorldConfig,
    decision_prob,
    decision_score,
    log_sigmoid,
    sample_prob,
    sample_score,
)

MAX_ENUMERATION_ATTEMPTS = 20


@dataclass(frozen=True)
class Step:
    outcome: Outcome
    decision: Decision


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    truncated: bool = False

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("trajectory must contain at least one step")
        for step in steps[:-1]:
            if step.decision is not Decision.RESAMPLE:
                raise ValueError("every step before the last must RESAMPLE")
        if steps[-1].decision is not Decision.STOP:
            raise ValueError("the last step must STOP (forced STOP when truncated)")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_outcome(self) -> Outcome:
        return self.steps[-1].outcome

    def policy_decisions(self) -> list[Decision]:
        """Decisions the policy actually took; the forced STOP reads back as RESAMPLE."""
        out = [s.decision for s in self.steps]
        if self.truncated:
            out[-1] = Decision.RESAMPLE
        return out

    def to_json(self) -> dict:
        return {
            "steps": [{"outcome": s.outcome.value, "decision": s.decision.value} for s in self.steps],
            "truncated": self.truncated,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Trajectory:
        try:
            steps = [Step(Outcome(s["outcome"]), Decision(s["decision"])) for s in obj["steps"]]
            truncated = obj.get("truncated", False)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed trajectory record: {exc}") from exc
        if not isinstance(truncated, bool):
            raise ValueError("'truncated' must be a boolean")
        return cls(tuple(steps), truncated)

    @classmethod
    def from_string(cls, text: str, truncated: bool = False) -> Trajectory:
        """Compact form, e.g. ``"WR CS"``: outcome letter then R/S per step."""
        steps = []
        for token in text.split():
            outcome = Outcome(token[0])
            decision = Decision.RESAMPLE if token[1] == "R" else Decision.STOP
            steps.append(Step(outcome, decision))
        return cls(tuple(steps), truncated)


def check_horizon(traj: Trajectory, config: WorldConfig) -> None:
    if len(traj) > config.max_attempts:
        raise ValueError(f"trajectory has {len(traj)} attempts, horizon is {config.max_attempts}")
    if traj.truncated and len(traj) != config.max_attempts:
        raise ValueError("a truncated trajectory must have exactly max_attempts steps")


def _finish(outcomes: list[Outcome], stopped: bool) -> Trajectory:
    steps = [Step(o, Decision.RESAMPLE) for o in outcomes[:-1]]
    steps.append(Step(outcomes[-1], Decision.STOP))
    return Trajectory(tuple(steps), truncated=not stopped)


def sample_trajectory(params: PolicyParams, config: WorldConfig, seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    return _sample_with(rng, params, config)


def _sample_with(rng: np.random.Generator, params: PolicyParams, config: WorldConfig) -> Trajectory:
    outcomes: list[Outcome] = []
    for _ in range(config.max_attempts):
        outcome = Outcome.CORRECT if rng.random() < sample_prob(params, Outcome.CORRECT) else Outcome.WRONG
        outcomes.append(outcome)
        if rng.random() < decision_prob(params, outcome, Decision.STOP):
            return _finish(outcomes, stopped=True)
    return _finish(outcomes, stopped=False)


def sample_batch(params: PolicyParams, config: WorldConfig, n: int, seed: int) -> list[Trajectory]:
    """Draw ``n`` independent trajectories from one seeded stream, vectorised over the batch."""
    rng = np.random.default_rng(seed)
    p_c = sample_prob(params, Outcome.CORRECT)
    p_stop_c = decision_prob(params, Outcome.CORRECT, Decision.STOP)
    p_stop_w = decision_prob(params, Outcome.WRONG, Decision.STOP)

    correct = np.zeros((n, config.max_attempts), dtype=bool)
    length = np.full(n, config.max_attempts, dtype=np.int64)
    stopped = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    for k in range(config.max_attempts):
        u = rng.random((2, n))
        c = u[0] < p_c
        correct[:, k] = c
        stop = active & (u[1] < np.where(c, p_stop_c, p_stop_w))
        length[stop] = k + 1
        stopped |= stop
        active &= ~stop

    cache: dict[tuple, Trajectory] = {}
    out = []
    for row, L, s in zip(correct, length, stopped):
        key = (row[:L].tobytes(), bool(s))
        traj = cache.get(key)
        if traj is None:
            outcomes = [Outcome.CORRECT if x else Outcome.WRONG for x in row[:L]]
            traj = cache[key] = _finish(outcomes, stopped=bool(s))
        out.append(traj)
    return out


@dataclass(frozen=True)
class PathFactors:
    """Counts of each probability factor along a path; the path probability is their product."""

    n_correct: int
    n_wrong: int
    n_stop_c: int
    n_resample_c: int
    n_resample_w: int
    n_stop_w: int

    @classmethod
    def of(cls, traj: Trajectory) -> PathFactors:
        counts = Counter()
        for step, decision in zip(traj.steps, traj.policy_decisions()):
            counts[step.outcome] += 1
            counts[(step.outcome, decision)] += 1
        return cls(
            counts[Outcome.CORRECT],
            counts[Outcome.WRONG],
            counts[(Outcome.CORRECT, Decision.STOP)],
            counts[(Outcome.CORRECT, Decision.RESAMPLE)],
            counts[(Outcome.WRONG, Decision.RESAMPLE)],
            counts[(Outcome.WRONG, Decision.STOP)],
        )

    def log_prob(self, params: PolicyParams) -> float:
        s, dc, dw = params.theta_s, params.theta_d_c, params.theta_d_w
        return (
            self.n_correct * log_sigmoid(s)
            + self.n_wrong * log_sigmoid(-s)
            + self.n_stop_c * log_sigmoid(dc)
            + self.n_resample_c * log_sigmoid(-dc)
            + self.n_resample_w * log_sigmoid(dw)
            + self.n_stop_w * log_sigmoid(-dw)
        )

    def prob(self, params: PolicyParams) -> float:
        return math.exp(self.log_prob(params))


def enumerate_trajectories(config: WorldConfig) -> list[tuple[Trajectory, PathFactors]]:
    """Every trajectory within the horizon, truncated ones included, with its factor counts."""
    if config.max_attempts > MAX_ENUMERATION_ATTEMPTS:
        raise OverflowError(
            f"enumeration limited to max_attempts <= {MAX_ENUMERATION_ATTEMPTS}, got {config.max_attempts}"
        )
    out = []
    for depth in range(1, config.max_attempts + 1):
        endings = [True, False] if depth == config.max_attempts else [True]
        for outcomes in itertools.product((Outcome.CORRECT, Outcome.WRONG), repeat=depth):
            for stopped in endings:
                traj = _finish(list(outcomes), stopped)
                out.append((traj, PathFactors.of(traj)))
    return out


def step_log_probs(traj: Trajectory, params: PolicyParams) -> list[float]:
    """Per-action conditional log-probabilities in generation order (sample, decide, sample, ...)."""
    out = []
    for step, decision in zip(traj.steps, traj.policy_decisions()):
        out.append(math.log(sample_prob(params, step.outcome)))
        out.append(math.log(decision_prob(params, step.outcome, decision)))
    return out


def log_prob(traj: Trajectory, params: PolicyParams) -> float:
    return PathFactors.of(traj).log_prob(params)


@dataclass(frozen=True)
class GradLogProb:
    sampling: np.ndarray  # nonzero only on theta_s
    decision: np.ndarray  # nonzero only on theta_d_c / theta_d_w

    @property
    def total(self) -> np.ndarray:
        return self.sampling + self.decision


def grad_log_prob(traj: Trajectory, params: PolicyParams) -> GradLogProb:
    sampling = np.zeros(3)
    decision = np.zeros(3)
    for step, d in zip(traj.steps, traj.policy_decisions()):
        sampling += sample_score(params, step.outcome)
        decision += decision_score(params, step.outcome, d)
    return GradLogProb(sampling, decision)


@dataclass(frozen=True)
class GroupSample:
    trajectories: tuple[Trajectory, ...]
    rewards: tuple[float, ...]

    def __post_init__(self):
        if len(self.trajectories) != len(self.rewards):
            raise ValueError("trajectories and rewards must have equal length")


def write_jsonl(trajectories, path, task: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for traj in trajectories:
            obj = traj.to_json()
            if task is not None:
                obj["task"] = task
            fh.write(json.dumps(obj) + "\n")


def read_jsonl(path) -> list[tuple[Trajectory, str | None]]:
    """Parse trajectory JSONL; errors name the offending line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                traj = Trajectory.from_json(obj)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            out.append((traj, obj.get("task")))
    return out
