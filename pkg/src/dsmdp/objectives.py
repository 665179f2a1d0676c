"""Objective gradients over the three-logit policy.

Four tracks are supported: the GRPO surrogate reward, the token-level KL
penalty against a reference policy, supervised fine-tuning (SFT) and dynamic
fine-tuning (DFT). All gradients are ascent directions.

Every token of an attempt carries the attempt-level probability, so an attempt
of length L contributes L identical per-token terms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .policy import (
    PARAM_NAMES,
    THETA_D_C,
    THETA_D_W,
    THETA_S,
    Decision,
    Outcome,
    PolicyParams,
    WorldConfig,
    decision_prob,
    decision_score,
    sample_prob,
    sample_score,
)
from .trajectory import GroupSample, Trajectory, enumerate_trajectories

EPSILON_STD = 1e-8


class Track(enum.Enum):
    REWARD = "reward"
    KL = "kl"
    SFT = "sft"
    DFT = "dft"
    NET = "net"


@dataclass(frozen=True)
class ObjectiveGradient:
    d_theta_s: float
    d_theta_d_c: float
    d_theta_d_w: float
    track: Track

    @classmethod
    def from_array(cls, values, track: Track) -> ObjectiveGradient:
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise FloatingPointError(f"non-finite {track.value} gradient: {values}")
        return cls(float(values[THETA_S]), float(values[THETA_D_C]), float(values[THETA_D_W]), track)

    def as_array(self) -> np.ndarray:
        return np.array([self.d_theta_s, self.d_theta_d_c, self.d_theta_d_w])

    def to_json(self) -> dict:
        return {"track": self.track.value, **dict(zip(PARAM_NAMES, self.as_array().tolist()))}


def reward(traj: Trajectory) -> float:
    return 1.0 if traj.final_outcome is Outcome.CORRECT else 0.0


@dataclass(frozen=True)
class AdvantageSet:
    advantages: tuple[float, ...]
    group_mean: float
    group_std: float


def grae(rewards) -> AdvantageSet:
    """Group-relative advantages with population standard deviation."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("GRAE needs a group of at least two rewards")
    mean = float(r.mean())
    std = float(r.std())
    if std <= EPSILON_STD:
        adv = np.zeros_like(r)
    else:
        adv = (r - mean) / std
    return AdvantageSet(tuple(adv.tolist()), mean, std)


# ---------------------------------------------------------------- surrogate

def _remaining_lengths(traj: Trajectory, config: WorldConfig) -> list[int]:
    lengths = [config.length(s.outcome) for s in traj.steps]
    return [sum(lengths[k:]) for k in range(len(lengths))]


def trajectory_surrogate_gradient(
    traj: Trajectory, advantage: float, params: PolicyParams, config: WorldConfig
) -> np.ndarray:
    """A * grad log P(traj), with step k scaled by gamma ** (tokens from attempt k onwards)."""
    grad = np.zeros(3)
    remaining = _remaining_lengths(traj, config)
    for step, decision, rem in zip(traj.steps, traj.policy_decisions(), remaining):
        weight = advantage * config.gamma**rem
        grad += weight * (sample_score(params, step.outcome) + decision_score(params, step.outcome, decision))
    return grad


def surrogate_gradient(group: GroupSample, params: PolicyParams, config: WorldConfig) -> ObjectiveGradient:
    adv = grae(group.rewards).advantages
    total = np.zeros(3)
    for traj, a in zip(group.trajectories, adv):
        total += trajectory_surrogate_gradient(traj, a, params, config)
    return ObjectiveGradient.from_array(total / len(group.trajectories), Track.REWARD)


# ---------------------------------------------------------------- Q tables

@dataclass(frozen=True)
class QEntry:
    """One action of a trajectory together with its implicit Q value."""

    step: int  # 1-based attempt index
    kind: str  # "sample" or "decision"
    action: str  # "C", "W", "STOP" or "RESAMPLE"
    immediate: float
    future: float
    q: float
    score: np.ndarray = field(repr=False)
    token_q: tuple[float, ...] = ()  # per-token values for sampling actions (SFT/DFT)

    @property
    def parameter(self) -> str:
        return PARAM_NAMES[int(np.flatnonzero(self.score)[0])] if np.any(self.score) else "-"

    @property
    def contribution(self) -> np.ndarray:
        return self.score * self.q

    def row(self) -> dict:
        idx = np.flatnonzero(self.score)
        return {
            "step": self.step,
            "action": self.action if self.kind == "decision" else f"Sample {self.action}",
            "d_k": self.immediate,
            "future_v": self.future,
            "q": self.q,
            "score": float(self.score[idx[0]]) if idx.size else 0.0,
            "parameter": self.parameter,
            "contribution": float(self.contribution[idx[0]]) if idx.size else 0.0,
        }


def _actions(traj: Trajectory, params: PolicyParams):
    """(step, outcome, decision, sample score, decision score) in generation order."""
    for k, (step, decision) in enumerate(zip(traj.steps, traj.policy_decisions()), 1):
        yield k, step.outcome, decision, sample_score(params, step.outcome), decision_score(params, step.outcome, decision)


def kl_penalties(traj: Trajectory, params: PolicyParams, ref: PolicyParams, config: WorldConfig):
    """Immediate penalties (d_sample, d_decision) per attempt."""
    s = config.kl_sign_convention.sign
    out = []
    for step, decision in zip(traj.steps, traj.policy_decisions()):
        o = step.outcome
        d_sample = config.length(o) * s * (math.log(sample_prob(params, o)) - math.log(sample_prob(ref, o)))
        d_decision = s * (math.log(decision_prob(params, o, decision)) - math.log(decision_prob(ref, o, decision)))
        out.append((d_sample, d_decision))
    return out


def kl_backward(penalties, gamma: float) -> list[tuple[float, float]]:
    """(Q_sample, Q_decision) per attempt from (d_sample, d_decision) pairs.

    Q_sample(k) = d_sample(k) + gamma * Q_d(k) and
    Q_d(k) = d_decision(k) + gamma * Q_sample(k + 1), with Q_sample(T + 1) = 0.
    """
    out = []
    next_q = 0.0
    for d_s, d_d in reversed(list(penalties)):
        q_d = d_d + gamma * next_q
        next_q = d_s + gamma * q_d
        out.append((next_q, q_d))
    out.reverse()
    return out


def kl_q_values(
    traj: Trajectory, params: PolicyParams, ref: PolicyParams, config: WorldConfig
) -> list[QEntry]:
    """KL-track Q value of every action, in generation order."""
    g = config.gamma
    penalties = kl_penalties(traj, params, ref, config)
    qs = kl_backward(penalties, g)
    entries: list[QEntry] = []
    for i, ((k, o, dec, s_score, d_score), (d_s, d_d), (q_s, q_d)) in enumerate(
        zip(_actions(traj, params), penalties, qs)
    ):
        next_q_s = qs[i + 1][0] if i + 1 < len(qs) else 0.0
        entries.append(QEntry(k, "sample", o.value, d_s, g * q_d, q_s, s_score))
        entries.append(QEntry(k, "decision", dec.value, d_d, g * next_q_s, q_d, d_score))
    return entries


def _q_weighted(entries: list[QEntry]) -> np.ndarray:
    total = np.zeros(3)
    for e in entries:
        total += e.contribution
    return total


def kl_gradient(traj: Trajectory, params: PolicyParams, ref: PolicyParams, config: WorldConfig) -> ObjectiveGradient:
    return ObjectiveGradient.from_array(_q_weighted(kl_q_values(traj, params, ref, config)), Track.KL)


def kl_net_factor(config: WorldConfig) -> float:
    """Multiplier on the KL track in the net update.

    Under the APPENDIX_C sign the penalties are already rewards (-log ratio), so
    the KL track is added; under SECTION_3 they are costs and get subtracted.
    Either way the net KL term pulls toward the reference.
    """
    return -config.kl_sign_convention.sign * config.kl_weight


@dataclass(frozen=True)
class CombinedGradient:
    reward: ObjectiveGradient
    kl: ObjectiveGradient
    net: ObjectiveGradient

    def to_json(self) -> dict:
        return {t.track.value: t.to_json() for t in (self.reward, self.kl, self.net)}


def combine(reward_grad: np.ndarray, kl_grad: np.ndarray, config: WorldConfig) -> CombinedGradient:
    net = reward_grad + kl_net_factor(config) * kl_grad
    return CombinedGradient(
        ObjectiveGradient.from_array(reward_grad, Track.REWARD),
        ObjectiveGradient.from_array(kl_grad, Track.KL),
        ObjectiveGradient.from_array(net, Track.NET),
    )


def combined_gradient(
    group: GroupSample, params: PolicyParams, ref: PolicyParams, config: WorldConfig
) -> CombinedGradient:
    """Reward, KL and net tracks for one group; the KL track is averaged over the group."""
    reward_grad = surrogate_gradient(group, params, config).as_array()
    kl_grad = np.zeros(3)
    for traj in group.trajectories:
        kl_grad += _q_weighted(kl_q_values(traj, params, ref, config))
    kl_grad /= len(group.trajectories)
    return combine(reward_grad, kl_grad, config)


# ---------------------------------------------------------------- SFT / DFT

def sft_q_values(traj: Trajectory, params: PolicyParams, config: WorldConfig) -> list[QEntry]:
    """Implicit Q values of maximum likelihood, where each token is rewarded 1/pi.

    Q_d(k) sums L/pi_sample + 1/pi_d over the later attempts. Token j of
    attempt k adds the (L_k - j) remaining token reciprocals and 1/pi_d(a_k).
    """
    actions = list(_actions(traj, params))
    inv_s = [1.0 / sample_prob(params, o) for _, o, _, _, _ in actions]
    inv_d = [1.0 / decision_prob(params, o, d) for _, o, d, _, _ in actions]
    lengths = [config.length(o) for _, o, _, _, _ in actions]
    return _implicit_q(actions, lengths, inv_s, inv_d)


def dft_q_values(traj: Trajectory, config: WorldConfig, c: float = 1.0) -> list[QEntry]:
    """Implicit Q values once the 1/pi weighting cancels: every token is worth ``c``.

    Scores are left as zeros since the values do not depend on any policy.
    """
    if not math.isfinite(c):
        raise ValueError("c must be finite")
    lengths = [config.length(s.outcome) for s in traj.steps]
    actions = [
        (k, s.outcome, d, np.zeros(3), np.zeros(3))
        for k, (s, d) in enumerate(zip(traj.steps, traj.policy_decisions()), 1)
    ]
    return _implicit_q(actions, lengths, [c] * len(actions), [c] * len(actions))


def _implicit_q(actions, lengths, token_reward, decision_reward) -> list[QEntry]:
    entries: list[QEntry] = []
    q_d = 0.0
    for (k, o, dec, s_score, d_score), L, rs, rd in zip(
        reversed(actions), reversed(lengths), reversed(token_reward), reversed(decision_reward)
    ):
        entries.append(QEntry(k, "decision", dec.value, 0.0, q_d, q_d, d_score))
        token_q = tuple((L - j) * rs + rd + q_d for j in range(1, L + 1))
        entries.append(QEntry(k, "sample", o.value, (L - 1) * rs + rd, q_d, token_q[0], s_score, token_q))
        q_d += L * rs + rd
    entries.reverse()
    return entries


def sft_gradient(traj: Trajectory, params: PolicyParams, config: WorldConfig) -> ObjectiveGradient:
    """Log-likelihood gradient of a demonstration, counting each attempt token once."""
    grad = np.zeros(3)
    for step, decision in zip(traj.steps, traj.policy_decisions()):
        grad += config.length(step.outcome) * sample_score(params, step.outcome)
        grad += decision_score(params, step.outcome, decision)
    return ObjectiveGradient.from_array(grad, Track.SFT)


def dft_gradient(traj: Trajectory, params: PolicyParams, config: WorldConfig, c: float = 1.0) -> ObjectiveGradient:
    """Sum of grad pi over demonstration tokens, scaled by ``c``."""
    grad = np.zeros(3)
    for step, decision in zip(traj.steps, traj.policy_decisions()):
        o = step.outcome
        grad += config.length(o) * sample_prob(params, o) * sample_score(params, o)
        grad += decision_prob(params, o, decision) * decision_score(params, o, decision)
    return ObjectiveGradient.from_array(c * grad, Track.DFT)


# ---------------------------------------------------------------- exact expectations

def expected_reward(params: PolicyParams, config: WorldConfig) -> float:
    return sum(f.prob(params) * reward(t) for t, f in enumerate_trajectories(config))


def expected_surrogate_gradient(
    params: PolicyParams, config: WorldConfig, baseline: float = 0.0
) -> ObjectiveGradient:
    """E[(R - baseline) * weighted score] over all trajectories; equals grad E[R] at gamma = 1."""
    total = np.zeros(3)
    for traj, f in enumerate_trajectories(config):
        total += f.prob(params) * trajectory_surrogate_gradient(traj, reward(traj) - baseline, params, config)
    return ObjectiveGradient.from_array(total, Track.REWARD)


def expected_kl_gradient(params: PolicyParams, ref: PolicyParams, config: WorldConfig) -> ObjectiveGradient:
    total = np.zeros(3)
    for traj, f in enumerate_trajectories(config):
        total += f.prob(params) * _q_weighted(kl_q_values(traj, params, ref, config))
    return ObjectiveGradient.from_array(total, Track.KL)


def expected_sft_gradient(params: PolicyParams, data: PolicyParams, config: WorldConfig) -> ObjectiveGradient:
    """SFT gradient averaged over demonstrations drawn from the ``data`` policy."""
    total = np.zeros(3)
    for traj, f in enumerate_trajectories(config):
        total += f.prob(data) * sft_gradient(traj, params, config).as_array()
    return ObjectiveGradient.from_array(total, Track.SFT)


def expected_dft_gradient(
    params: PolicyParams, data: PolicyParams, config: WorldConfig, c: float = 1.0
) -> ObjectiveGradient:
    total = np.zeros(3)
    for traj, f in enumerate_trajectories(config):
        total += f.prob(data) * dft_gradient(traj, params, config, c).as_array()
    return ObjectiveGradient.from_array(total, Track.DFT)


def expected_combined_gradient(params: PolicyParams, ref: PolicyParams, config: WorldConfig) -> CombinedGradient:
    return combine(
        expected_surrogate_gradient(params, config).as_array(),
        expected_kl_gradient(params, ref, config).as_array(),
        config,
    )
