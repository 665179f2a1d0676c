"""Two-stage calibration model of the retry process.

The process is summarised by three rates: first-attempt correctness ``p_s``,
the stop rate after a correct attempt ``p_d_c`` and the resample rate after a
wrong one ``p_d_w``. At its fixed point the accuracy is

    p_s * p_d_c / (1 - (p_s * (1 - p_d_c) + (1 - p_s) * p_d_w)).

A truncated record contributes its first attempt to ``p_s``. Its forced final
STOP is not a policy decision, so it is left out of the decision counts, and
the record is left out of the observed accuracy.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .policy import Decision, Outcome, PolicyParams, action_probs
from .trajectory import Trajectory

EPSILON_DENOM = 1e-12
FIELDS = ("p_s", "p_d_c", "p_d_w")
TRUNCATION_MODES = ("exclude", "final_attempt", "fail")


class DegenerateProcessError(ValueError):
    """The process (almost) never stops, so the accuracy is 0/0."""


@dataclass(frozen=True)
class CalibrationParams:
    p_s: float
    p_d_c: float
    p_d_w: float
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    undefined: frozenset[str] = frozenset()
    predicted_acc: float | None = None
    predicted_ci: tuple[float, float] | None = None

    @classmethod
    def of(cls, p_s: float, p_d_c: float, p_d_w: float) -> CalibrationParams:
        return cls(p_s, p_d_c, p_d_w, ci={f: (v, v) for f, v in zip(FIELDS, (p_s, p_d_c, p_d_w))})

    @classmethod
    def from_policy(cls, params: PolicyParams) -> CalibrationParams:
        p = action_probs(params)
        return cls.of(p.p_correct, p.p_stop_given_c, p.p_resample_given_w)

    def values(self) -> tuple[float, float, float]:
        return self.p_s, self.p_d_c, self.p_d_w

    def to_json(self) -> dict:
        out = {}
        for name in FIELDS:
            value = getattr(self, name)
            out[name] = None if name in self.undefined else value
            out[f"{name}_ci"] = list(self.ci.get(name, (value, value)))
        out["undefined"] = sorted(self.undefined)
        if self.predicted_acc is not None:
            out["predicted_acc"] = self.predicted_acc
            out["predicted_acc_ci"] = list(self.predicted_ci) if self.predicted_ci else None
        return out


def _model_accuracy(p_s: float, p_d_c: float, p_d_w: float) -> float:
    # An undefined rate only matters when its coefficient is nonzero.
    if math.isnan(p_d_w) and p_s == 1.0:
        p_d_w = 0.0
    if math.isnan(p_d_c) and p_s == 0.0:
        p_d_c = 0.0
    if math.isnan(p_s) or math.isnan(p_d_c) or math.isnan(p_d_w):
        return math.nan
    denom = 1.0 - (p_s * (1.0 - p_d_c) + (1.0 - p_s) * p_d_w)
    if denom <= EPSILON_DENOM:
        raise DegenerateProcessError(f"process never stops (1 - continue probability = {denom:.3g})")
    return min(1.0, max(0.0, p_s * p_d_c / denom))


def predict_accuracy(p: CalibrationParams | PolicyParams) -> float:
    if isinstance(p, PolicyParams):
        p = CalibrationParams.from_policy(p)
    return _model_accuracy(*p.values())


def brute_force_accuracy(
    p: CalibrationParams | PolicyParams, max_attempts: int, truncation: str = "exclude"
) -> float:
    """Exact success probability of the retry process within ``max_attempts`` rounds.

    Rounds are unrolled backwards: success = a + c * success', with
    a = p_s * p_d_c (correct and stop) and c the continue probability.
    ``truncation`` decides what a run that hits the horizon counts as:

    * ``"exclude"`` drops it and conditions on having stopped,
    * ``"final_attempt"`` scores its last attempt (the trainer's convention),
    * ``"fail"`` counts it as wrong.
    """
    if isinstance(p, PolicyParams):
        p = CalibrationParams.from_policy(p)
    if truncation not in TRUNCATION_MODES:
        raise ValueError(f"truncation must be one of {TRUNCATION_MODES}")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    p_s, p_d_c, p_d_w = p.values()
    a = p_s * p_d_c
    stop_wrong = (1.0 - p_s) * (1.0 - p_d_w)
    c = p_s * (1.0 - p_d_c) + (1.0 - p_s) * p_d_w

    if truncation == "final_attempt":
        # the last round is scored on its answer whatever the decision
        success = p_s
        for _ in range(max_attempts - 1):
            success = a + c * success
        return success

    success = 0.0
    stopped = 0.0
    for _ in range(max_attempts):
        success = a + c * success
        stopped = a + stop_wrong + c * stopped
    if truncation == "fail":
        return success
    if stopped <= EPSILON_DENOM:
        raise DegenerateProcessError("no run stops within the horizon")
    return success / stopped


@dataclass(frozen=True)
class TrajectoryRecordSet:
    records: tuple[Trajectory, ...]
    task_label: str = ""

    def __len__(self) -> int:
        return len(self.records)


def record_counts(records) -> np.ndarray:
    """Per-record sufficient statistics, one row per record.

    Columns: first attempt correct, correct attempts with a decision, STOPs
    after correct, wrong attempts with a decision, RESAMPLEs after wrong,
    counted toward observed accuracy (not truncated), final answer correct.
    """
    out = np.zeros((len(records), 7), dtype=np.int64)
    for i, traj in enumerate(records):
        row = out[i]
        row[0] = traj.steps[0].outcome is Outcome.CORRECT
        decided = traj.steps[:-1] if traj.truncated else traj.steps
        for step in decided:
            if step.outcome is Outcome.CORRECT:
                row[1] += 1
                row[2] += step.decision is Decision.STOP
            else:
                row[3] += 1
                row[4] += step.decision is Decision.RESAMPLE
        row[5] = not traj.truncated
        row[6] = (not traj.truncated) and traj.final_outcome is Outcome.CORRECT
    return out


def _rates(totals: np.ndarray) -> np.ndarray:
    """(p_s, p_d_c, p_d_w) from summed counts; NaN where a denominator is zero."""
    totals = np.atleast_2d(totals).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_s = totals[:, 0] / totals[:, -1]
        p_d_c = np.where(totals[:, 1] > 0, totals[:, 2] / totals[:, 1], np.nan)
        p_d_w = np.where(totals[:, 3] > 0, totals[:, 4] / totals[:, 3], np.nan)
    return np.stack([p_s, p_d_c, p_d_w], axis=1)


def _with_n(counts: np.ndarray) -> np.ndarray:
    return np.hstack([counts, np.ones((counts.shape[0], 1), dtype=np.int64)])


def _as_records(records) -> tuple[Trajectory, ...]:
    recs = records.records if isinstance(records, TrajectoryRecordSet) else tuple(records)
    if not recs:
        raise ValueError("record set is empty")
    return recs


def estimate(records: TrajectoryRecordSet) -> CalibrationParams:
    counts = _with_n(record_counts(_as_records(records)))
    rates = _rates(counts.sum(axis=0))[0]
    undefined = frozenset(f for f, v in zip(FIELDS, rates) if math.isnan(v))
    ci = {f: ((0.0, 1.0) if f in undefined else (float(v), float(v))) for f, v in zip(FIELDS, rates)}
    return CalibrationParams(*(float(v) for v in rates), ci=ci, undefined=undefined)


def _safe_accuracy(p_s: float, p_d_c: float, p_d_w: float) -> float:
    try:
        return _model_accuracy(p_s, p_d_c, p_d_w)
    except DegenerateProcessError:
        return math.nan


def bootstrap_ci(records: TrajectoryRecordSet, resamples: int = 100, seed: int = 0) -> CalibrationParams:
    """Percentile bootstrap (2.5 / 97.5) over records resampled with replacement."""
    if resamples < 2:
        raise ValueError("resamples must be >= 2")
    counts = _with_n(record_counts(_as_records(records)))
    point = estimate(records)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, counts.shape[0], size=(resamples, counts.shape[0]))
    n = counts.shape[0]
    weights = np.stack([np.bincount(row, minlength=n) for row in idx])
    totals = weights @ counts
    rates = _rates(totals)
    acc = np.array([_safe_accuracy(*r) for r in rates])

    ci = {}
    for j, name in enumerate(FIELDS):
        col = rates[:, j]
        if name in point.undefined or np.all(np.isnan(col)):
            ci[name] = (0.0, 1.0)
        else:
            lo, hi = np.nanpercentile(col, [2.5, 97.5])
            value = getattr(point, name)
            ci[name] = (float(min(lo, value)), float(max(hi, value)))

    predicted = _safe_accuracy(*point.values())
    predicted_ci = None
    if not np.all(np.isnan(acc)):
        lo, hi = np.nanpercentile(acc, [2.5, 97.5])
        predicted_ci = (float(lo), float(hi))
    return CalibrationParams(
        point.p_s,
        point.p_d_c,
        point.p_d_w,
        ci=ci,
        undefined=point.undefined,
        predicted_acc=None if math.isnan(predicted) else predicted,
        predicted_ci=predicted_ci,
    )


@dataclass(frozen=True)
class ObservedAccuracy:
    accuracy: float
    standard_error: float
    n: int  # records that stopped on their own
    n_truncated: int

    @property
    def ci(self) -> tuple[float, float]:
        """95% normal-approximation interval."""
        half = 1.96 * self.standard_error
        return max(0.0, self.accuracy - half), min(1.0, self.accuracy + half)


def observed_accuracy(records: TrajectoryRecordSet) -> ObservedAccuracy:
    counts = record_counts(_as_records(records))
    n = int(counts[:, 5].sum())
    truncated = counts.shape[0] - n
    if n == 0:
        return ObservedAccuracy(math.nan, math.nan, 0, truncated)
    acc = counts[:, 6].sum() / n
    return ObservedAccuracy(float(acc), float(math.sqrt(acc * (1.0 - acc) / n)), n, truncated)


def calibration_report(records: TrajectoryRecordSet, resamples: int = 100, seed: int = 0) -> dict:
    params = bootstrap_ci(records, resamples, seed)
    observed = observed_accuracy(records)
    return {
        "task": records.task_label,
        "n": len(records),
        "n_truncated": observed.n_truncated,
        "params": params.to_json(),
        "predicted_acc": params.predicted_acc,
        "predicted_acc_ci": list(params.predicted_ci) if params.predicted_ci else None,
        "observed_acc": None if math.isnan(observed.accuracy) else observed.accuracy,
        "observed_acc_ci": None if math.isnan(observed.accuracy) else list(observed.ci),
    }


def group_by_task(pairs, default_label: str = "all") -> list[TrajectoryRecordSet]:
    """Split (trajectory, task) pairs from JSONL into one record set per task label."""
    groups: dict[str, list[Trajectory]] = defaultdict(list)
    for traj, task in pairs:
        groups[task if task is not None else default_label].append(traj)
    return [TrajectoryRecordSet(tuple(v), k) for k, v in sorted(groups.items())]
