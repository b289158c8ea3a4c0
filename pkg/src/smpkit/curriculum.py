"""Difficulty estimation and curriculum ordering.

A sample's difficulty comes from replaying it N times through a
cold-started model and counting correct predictions. Samples bin into
easy, medium, and hard thirds; training keeps only the medium bin,
ordered from least to most difficult.
"""

from __future__ import annotations

import dataclasses
import enum
from typing import Iterable

from .errors import DomainError

DEFAULT_N_ROLLOUTS = 8


class DifficultyBin(enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    def __str__(self) -> str:
        return self.value


def _check_counts(n_correct: int, n_rollouts: int) -> None:
    if not isinstance(n_correct, int) or isinstance(n_correct, bool):
        raise DomainError(f"n_correct must be an integer, got {n_correct!r}")
    if not isinstance(n_rollouts, int) or isinstance(n_rollouts, bool):
        raise DomainError(f"n_rollouts must be an integer, got {n_rollouts!r}")
    if n_rollouts < 1:
        raise DomainError(f"n_rollouts must be >= 1, got {n_rollouts}")
    if not 0 <= n_correct <= n_rollouts:
        raise DomainError(f"n_correct must be in [0, {n_rollouts}], got {n_correct}")


def difficulty_bin(n_correct: int, n_rollouts: int) -> DifficultyBin:
    """Bin a correct-count into hard, medium, or easy thirds of [0, N].

    Thresholds are compared by integer cross-multiplication (3n vs N and
    2N), so boundaries are exact for every N. A perfect score counts as
    easy.
    """
    _check_counts(n_correct, n_rollouts)
    if 3 * n_correct < n_rollouts:
        return DifficultyBin.HARD
    if 3 * n_correct < 2 * n_rollouts:
        return DifficultyBin.MEDIUM
    return DifficultyBin.EASY


def difficulty(n_correct: int, n_rollouts: int) -> float:
    """Fraction of rollouts the model got wrong: (N - n) / N in [0, 1]."""
    _check_counts(n_correct, n_rollouts)
    return (n_rollouts - n_correct) / n_rollouts


@dataclasses.dataclass(frozen=True)
class DifficultyRecord:
    """Per-sample rollout tally used to place it on the curriculum."""

    sample_id: str
    n_correct: int
    n_rollouts: int = DEFAULT_N_ROLLOUTS

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise DomainError("sample_id must be non-empty")
        _check_counts(self.n_correct, self.n_rollouts)

    @property
    def bin(self) -> DifficultyBin:
        return difficulty_bin(self.n_correct, self.n_rollouts)

    @property
    def difficulty(self) -> float:
        return difficulty(self.n_correct, self.n_rollouts)


def curriculum_order(records: Iterable[DifficultyRecord]) -> list[str]:
    """Order samples for training: medium bin only, easiest first.

    Easy and hard records are discarded. The rest sort by ascending
    difficulty with ties broken by sample_id, so the result is
    deterministic and independent of input order.
    """
    medium = [r for r in records if r.bin is DifficultyBin.MEDIUM]
    medium.sort(key=lambda r: (r.difficulty, r.sample_id))
    return [r.sample_id for r in medium]
