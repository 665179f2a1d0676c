"""Three-logit two-stage policy: one sampling logit and two decision logits.

The sampling policy emits a Correct answer with probability sigmoid(theta_s).
The decision policy stops after a Correct answer with probability
sigmoid(theta_d_c) and resamples after a Wrong answer with probability
sigmoid(theta_d_w).
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields

import numpy as np


class Outcome(enum.Enum):
    CORRECT = "C"
    WRONG = "W"


class Decision(enum.Enum):
    STOP = "STOP"
    RESAMPLE = "RESAMPLE"


class KLSign(enum.Enum):
    """Sign applied to log(pi_theta / pi_ref) when forming per-action penalties."""

    SECTION_3 = "section3"  # d = +log ratio
    APPENDIX_C = "appendixc"  # d = -log ratio

    @property
    def sign(self) -> float:
        return 1.0 if self is KLSign.SECTION_3 else -1.0


# Index of each logit in score / gradient vectors.
THETA_S, THETA_D_C, THETA_D_W = 0, 1, 2
PARAM_NAMES = ("theta_s", "theta_d_c", "theta_d_w")


def sigmoid(logit: float) -> float:
    if not math.isfinite(logit):
        raise ValueError(f"sigmoid needs a finite logit, got {logit!r}")
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    z = math.exp(logit)
    return z / (1.0 + z)


def log_sigmoid(logit: float) -> float:
    """log(sigmoid(x)) without underflow for very negative x."""
    if logit >= 0:
        return -math.log1p(math.exp(-logit))
    return logit - math.log1p(math.exp(logit))


@dataclass(frozen=True)
class PolicyParams:
    theta_s: float
    theta_d_c: float
    theta_d_w: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite, got {value!r}")
            object.__setattr__(self, f.name, float(value))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_s, self.theta_d_c, self.theta_d_w], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> PolicyParams:
        a, b, c = (float(v) for v in values)
        return cls(a, b, c)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class WorldConfig:
    len_correct: int = 8
    len_wrong: int = 8
    gamma: float = 1.0
    max_attempts: int = 8
    kl_weight: float = 1.0
    group_size: int = 8
    kl_sign_convention: KLSign = KLSign.APPENDIX_C

    def __post_init__(self):
        if isinstance(self.kl_sign_convention, str):
            object.__setattr__(self, "kl_sign_convention", KLSign(self.kl_sign_convention))
        if self.len_correct < 1 or self.len_wrong < 1:
            raise ValueError("answer lengths must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (math.isfinite(self.kl_weight) and self.kl_weight >= 0.0):
            raise ValueError(f"kl_weight must be a nonnegative real, got {self.kl_weight}")

    def length(self, outcome: Outcome) -> int:
        return self.len_correct if outcome is Outcome.CORRECT else self.len_wrong

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kl_sign_convention"] = self.kl_sign_convention.value
        return d


@dataclass(frozen=True)
class ActionProbs:
    p_correct: float
    p_wrong: float
    p_stop_given_c: float
    p_resample_given_c: float
    p_resample_given_w: float
    p_stop_given_w: float


def action_probs(params: PolicyParams) -> ActionProbs:
    # Complements come from the negated logit, so saturation stays exact in both tails.
    return ActionProbs(
        p_correct=sigmoid(params.theta_s),
        p_wrong=sigmoid(-params.theta_s),
        p_stop_given_c=sigmoid(params.theta_d_c),
        p_resample_given_c=sigmoid(-params.theta_d_c),
        p_resample_given_w=sigmoid(params.theta_d_w),
        p_stop_given_w=sigmoid(-params.theta_d_w),
    )


def sample_prob(params: PolicyParams, outcome: Outcome) -> float:
    return sigmoid(params.theta_s if outcome is Outcome.CORRECT else -params.theta_s)


def decision_prob(params: PolicyParams, outcome: Outcome, decision: Decision) -> float:
    if outcome is Outcome.CORRECT:
        logit = params.theta_d_c if decision is Decision.STOP else -params.theta_d_c
    else:
        logit = params.theta_d_w if decision is Decision.RESAMPLE else -params.theta_d_w
    return sigmoid(logit)


def sample_score(params: PolicyParams, outcome: Outcome) -> np.ndarray:
    """Gradient of log pi_sample(outcome) with respect to the three logits."""
    score = np.zeros(3)
    p = sigmoid(params.theta_s)
    score[THETA_S] = (1.0 - p) if outcome is Outcome.CORRECT else -p
    return score


def decision_score(params: PolicyParams, outcome: Outcome, decision: Decision) -> np.ndarray:
    """Gradient of log pi_d(decision | outcome); only one decision logit is touched."""
    score = np.zeros(3)
    if outcome is Outcome.CORRECT:
        p = sigmoid(params.theta_d_c)
        score[THETA_D_C] = (1.0 - p) if decision is Decision.STOP else -p
    else:
        p = sigmoid(params.theta_d_w)
        score[THETA_D_W] = (1.0 - p) if decision is Decision.RESAMPLE else -p
    return score


def score_components(params: PolicyParams, outcome: Outcome, decision: Decision) -> np.ndarray:
    """Score of one (attempt, decision) step: sampling plus decision parts."""
    return sample_score(params, outcome) + decision_score(params, outcome, decision)
