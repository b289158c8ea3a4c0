"""Shaped rewards over parsed responses, and the SFT rejection filter.

R = alpha * Format + beta * Accuracy + gamma * Consistency.

All three components are binary. A response that fails to parse scores
zero on every component: the format check gates the rest, which is also
what makes the same machinery usable as a rejection-sampling filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import DomainError
from .labeling import LabeledSample, MovementLabel, classify
from .parsing import format_score, parse


@dataclass(frozen=True)
class RewardWeights:
    """Non-negative component weights; accuracy carries the task signal."""

    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise DomainError(f"weight {name} must be a non-negative finite real, got {value!r}")
            object.__setattr__(self, name, float(value))

    @property
    def total_max(self) -> float:
        return self.alpha + self.beta + self.gamma


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    accuracy: int
    consistency: int
    total: float


def accuracy_score(predicted: MovementLabel, truth: MovementLabel) -> int:
    """1 iff the predicted direction equals the ground truth."""
    return 1 if predicted is truth else 0


def consistency_score(change_pct: float, answer: MovementLabel) -> int:
    """1 iff the predicted percent change classifies to the predicted label."""
    return 1 if classify(change_pct) is answer else 0


def shape(
    text: str,
    truth_label: MovementLabel,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Parse and score one raw response against the ground-truth label."""
    parsed, report = parse(text)
    fmt = format_score(report)
    if parsed is None:
        return RewardBreakdown(format=0, accuracy=0, consistency=0, total=0.0)
    acc = accuracy_score(parsed.answer, truth_label)
    con = consistency_score(parsed.change_pct, parsed.answer)
    total = weights.alpha * fmt + weights.beta * acc + weights.gamma * con
    return RewardBreakdown(format=fmt, accuracy=acc, consistency=con, total=total)


def filter_for_sft(
    candidates: Sequence[str],
    truth: Union[LabeledSample, MovementLabel],
) -> list[str]:
    """Keep only fully correct, well-formed candidates (order preserved)."""
    if isinstance(truth, LabeledSample):
        truth_label = truth.label
    elif isinstance(truth, MovementLabel):
        truth_label = truth
    else:
        raise DomainError(f"truth must be a LabeledSample or MovementLabel, got {truth!r}")
    accepted = []
    for text in candidates:
        breakdown = shape(text, truth_label)
        if breakdown.format == 1 and breakdown.accuracy == 1 and breakdown.consistency == 1:
            accepted.append(text)
    return accepted
