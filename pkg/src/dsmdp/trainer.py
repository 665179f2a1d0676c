"""GRPO-style training of the three-logit policy with a periodically refreshed reference.

Each step draws an on-policy group, standardises rewards within it, forms the
reward / KL / net gradients and takes a plain gradient-ascent step on the net
gradient. Every ``ref_refresh_interval`` steps the reference is reset to the
current parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .attribution import DEFAULT_THRESHOLD, AttributionReport, attribute
from .objectives import CombinedGradient, combined_gradient, reward
from .policy import PARAM_NAMES, ActionProbs, PolicyParams, WorldConfig, action_probs
from .trajectory import GroupSample, sample_trajectory

log = logging.getLogger(__name__)

WORKED_INIT = PolicyParams(0.4, 2.2, 1.4)
WORKED_REF = PolicyParams(0.3, 2.0, 1.2)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 0.02
    group_size: int = 16
    kl_weight: float = 1.0
    ref_refresh_interval: int = 50
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    init: PolicyParams = WORKED_INIT
    ref_init: PolicyParams | None = WORKED_REF  # None: start the reference at ``init``
    balance_threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate >= 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.ref_refresh_interval < 1:
            raise ValueError("ref_refresh_interval must be >= 1")
        if not self.kl_weight >= 0.0:
            raise ValueError("kl_weight must be >= 0")

    @property
    def effective_world(self) -> WorldConfig:
        """The world with this run's group size and KL weight filled in."""
        return dataclasses.replace(self.world, group_size=self.group_size, kl_weight=self.kl_weight)


@dataclass(frozen=True)
class StepRecord:
    step: int
    params: PolicyParams
    ref: PolicyParams
    probs: ActionProbs
    gradients: CombinedGradient
    attribution: dict[str, AttributionReport]
    mean_reward: float


@dataclass
class TrainingTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows()])

    def rows(self) -> list[dict]:
        out = []
        for r in self.records:
            row = {"step": r.step}
            row.update(r.params.to_dict())
            row.update({f"ref_{k}": v for k, v in r.ref.to_dict().items()})
            row.update(dataclasses.asdict(r.probs))
            for track in (r.gradients.reward, r.gradients.kl, r.gradients.net):
                for name, value in zip(PARAM_NAMES, track.as_array()):
                    row[f"{track.track.value}_d_{name}"] = float(value)
            for name, rep in r.attribution.items():
                row[f"{name}_sampling_magnitude"] = rep.sampling_magnitude
                row[f"{name}_decision_magnitude"] = rep.decision_magnitude
                row[f"{name}_ratio"] = rep.ratio
                row[f"{name}_balanced"] = rep.balanced
            row["mean_reward"] = r.mean_reward
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.rows(), fh, indent=1, default=_json_default)


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(f"not serialisable: {obj!r}")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, trace: TrainingTrace):
        super().__init__(message)
        self.trace = trace


def group_seed(seed: int, step: int, member: int) -> list[int]:
    """Entropy for one group member; numpy mixes the words into a PCG64 state."""
    return [seed, step, member]


def train(cfg: TrainConfig) -> TrainingTrace:
    world = cfg.effective_world
    params = cfg.init
    ref = cfg.ref_init if cfg.ref_init is not None else cfg.init
    trace = TrainingTrace()
    for step in range(1, cfg.steps + 1):
        trajs = tuple(sample_trajectory(params, world, group_seed(cfg.seed, step, i)) for i in range(cfg.group_size))
        rewards = tuple(reward(t) for t in trajs)
        grads = combined_gradient(GroupSample(trajs, rewards), params, ref, world)
        trace.records.append(
            StepRecord(
                step=step,
                params=params,
                ref=ref,
                probs=action_probs(params),
                gradients=grads,
                attribution={
                    g.track.value: attribute(g, cfg.balance_threshold) for g in (grads.reward, grads.kl, grads.net)
                },
                mean_reward=float(np.mean(rewards)),
            )
        )
        with np.errstate(over="ignore"):
            updated = params.as_array() + cfg.learning_rate * grads.net.as_array()
        if not np.all(np.isfinite(updated)):
            raise TrainingDiverged(f"parameters became non-finite after step {step}", trace)
        params = PolicyParams.from_array(updated)
        if step % cfg.ref_refresh_interval == 0:
            ref = params
            log.debug("step %d: reference refreshed to %s", step, params)
    return trace


def dominant_period(series, min_lag: int = 2, peak_fraction: float = 0.8) -> int | None:
    """Refresh period of a gradient-magnitude series, found by autocorrelation.

    The series is log-transformed (multiplicative sampling noise becomes
    additive, and the near-zero step after each refresh becomes a sharp dip)
    and first-differenced to remove slow drift. The shortest lag whose
    autocorrelation reaches ``peak_fraction`` of the maximum is returned so
    that multiples of the period are not reported.
    """
    x = np.asarray(series, dtype=np.float64)
    positive = x[x > 0]
    if positive.size == 0:
        return None
    y = np.diff(np.log(x + 1e-3 * np.median(positive)))
    y -= y.mean()
    n = y.size
    max_lag = n // 4
    denom = float(np.dot(y, y))
    if max_lag <= min_lag or denom == 0.0:
        return None
    acf = np.correlate(y, y, mode="full")[n - 1 :] / denom
    window = acf[min_lag:max_lag]
    best = float(window.max())
    if best <= 0.0:
        return None
    return min_lag + int(np.flatnonzero(window >= peak_fraction * best)[0])


@dataclass(frozen=True)
class TrainingSummary:
    steps: int
    final_params: PolicyParams
    final_probs: ActionProbs
    mean_ratio: dict[str, float]
    mean_reward: float
    kl_period: int | None

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "final_params": self.final_params.to_dict(),
            "final_probs": dataclasses.asdict(self.final_probs),
            "mean_ratio": self.mean_ratio,
            "mean_reward": self.mean_reward,
            "kl_period": self.kl_period,
        }


def summarize(trace: TrainingTrace) -> TrainingSummary:
    if not trace.records:
        raise ValueError("empty trace")
    last = trace.records[-1]
    mean_ratio = {}
    for name in last.attribution:
        ratios = np.array([r.attribution[name].ratio for r in trace.records])
        finite = ratios[np.isfinite(ratios)]
        mean_ratio[name] = float(finite.mean()) if finite.size else math.inf
    kl_magnitude = [float(np.linalg.norm(r.gradients.kl.as_array())) for r in trace.records]
    return TrainingSummary(
        steps=len(trace.records),
        final_params=last.params,
        final_probs=last.probs,
        mean_ratio=mean_ratio,
        mean_reward=float(np.mean([r.mean_reward for r in trace.records])),
        kl_period=dominant_period(kl_magnitude),
    )
