"""Latency reward and group-relative advantages."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveRatio, ZeroPolicyProbability
from .hints import Hint


def latency_reward(ratio: float) -> float:
    """tanh(ln ratio): bounded in (-1, 1), antisymmetric under ratio -> 1/ratio."""
    if not ratio > 0 or math.isnan(ratio):
        raise NonPositiveRatio(f"latency ratio must be > 0, got {ratio}")
    return math.tanh(math.log(ratio))


def normalize_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """(r - mean) / std with the population std; all zeros when std < std_floor."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return r
    std = r.std()
    if std < std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def gradient_coefficient(advantage: float, prob_ref: float, prob_theta: float, beta: float) -> float:
    """Per-sample score-function weight: A + beta * (pi_ref / pi_theta - 1)."""
    if not prob_theta > 0:
        raise ZeroPolicyProbability(f"policy probability must be > 0, got {prob_theta}")
    return advantage + beta * (prob_ref / prob_theta - 1.0)


def clipped_surrogate(ratio: float, advantage: float, clip_epsilon: float) -> float:
    clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


@dataclass
class GroupMember:
    hint: Hint | None
    latency_ms: float
    ratio: float
    reward: float
    advantage: float


@dataclass
class RewardGroup:
    sql_id: str
    baseline_latency_ms: float
    members: list[GroupMember] = field(default_factory=list)

    @property
    def group_size(self) -> int:
        return len(self.members)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([m.reward for m in self.members])

    @property
    def advantages(self) -> np.ndarray:
        return np.array([m.advantage for m in self.members])


def score_group(
    baseline_ms: float,
    latencies: Sequence[float],
    hints: Sequence[Hint | None] | None = None,
    sql_id: str = "",
    std_floor: float = 1e-8,
) -> RewardGroup:
    if not baseline_ms > 0:
        raise NonPositiveRatio(f"baseline latency must be > 0, got {baseline_ms}")
    for t in latencies:
        if not t > 0:
            raise NonPositiveRatio(f"latency must be > 0, got {t}")
    ratios = [baseline_ms / t for t in latencies]
    rewards = [latency_reward(d) for d in ratios]
    advantages = normalize_advantages(rewards, std_floor)
    hints = list(hints) if hints is not None else [None] * len(latencies)
    members = [
        GroupMember(h, float(t), d, r, float(a))
        for h, t, d, r, a in zip(hints, latencies, ratios, rewards, advantages)
    ]
    return RewardGroup(sql_id, float(baseline_ms), members)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    beta: float = 0.04
    clip_epsilon: float = 0.2
    std_floor: float = 1e-8
    learning_rate: float = 0.1
    steps: int = 200
    batch_size: int | None = None  # None: every context each step
    inner_updates: int = 1
    max_grad_norm: float | None = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be > 0")
        if not self.std_floor > 0:
            raise ValueError("std_floor must be > 0")
        if self.steps < 0 or self.inner_updates < 1:
            raise ValueError("steps must be >= 0 and inner_updates >= 1")
