"""Majority voting, vote-scaling curves, and F1 evaluation.

Aggregates repeated predictions per sample by majority vote (ties go to
the most conservative label), evaluates with macro-averaged F1 over the
three movement classes, and provides the seeded random-guessing band
that a useful model must beat.
"""

from __future__ import annotations

import dataclasses
import random
from typing import Iterable, Mapping, Optional, Sequence

from .errors import DomainError, ValidationError
from .labeling import LabeledSample, MovementLabel, tie_rank

# Row/column order for confusion matrices; also the tie-precedence order.
LABEL_ORDER = (MovementLabel.HOLD, MovementLabel.DOWN, MovementLabel.UP)
_LABEL_INDEX = {label: i for i, label in enumerate(LABEL_ORDER)}

DEFAULT_RANDOM_SEEDS = tuple(range(32))
DEFAULT_VOTE_KS = (1, 2, 4, 8, 16, 32)


def _check_label(value: object, what: str = "label") -> MovementLabel:
    if not isinstance(value, MovementLabel):
        raise ValidationError(f"{what} must be a MovementLabel, got {value!r}")
    return value


@dataclasses.dataclass(frozen=True)
class Ballot:
    """All repeated predictions for one sample."""

    sample_id: str
    votes: Sequence[MovementLabel]

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise DomainError("sample_id must be non-empty")
        votes = tuple(self.votes)
        if not votes:
            raise DomainError(f"ballot for {self.sample_id} has no votes")
        for v in votes:
            _check_label(v, "vote")
        object.__setattr__(self, "votes", votes)


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts indexed (truth, predicted) in LABEL_ORDER."""

    counts: Sequence[Sequence[int]]

    def __post_init__(self) -> None:
        rows = tuple(tuple(row) for row in self.counts)
        if len(rows) != 3 or any(len(row) != 3 for row in rows):
            raise ValidationError(f"confusion matrix must be 3x3, got {rows!r}")
        for row in rows:
            for c in row:
                if not isinstance(c, int) or isinstance(c, bool) or c < 0:
                    raise ValidationError(f"counts must be non-negative integers, got {c!r}")
        object.__setattr__(self, "counts", rows)

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[tuple[MovementLabel, MovementLabel]]
    ) -> "ConfusionMatrix":
        counts = [[0, 0, 0] for _ in range(3)]
        for truth, predicted in pairs:
            counts[_LABEL_INDEX[_check_label(truth, "truth")]][
                _LABEL_INDEX[_check_label(predicted, "prediction")]
            ] += 1
        return cls(counts=tuple(tuple(row) for row in counts))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return ConfusionMatrix(
            counts=tuple(
                tuple(a + b for a, b in zip(ra, rb))
                for ra, rb in zip(self.counts, other.counts)
            )
        )

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def count(self, truth: MovementLabel, predicted: MovementLabel) -> int:
        return self.counts[_LABEL_INDEX[truth]][_LABEL_INDEX[predicted]]

    def support(self, label: MovementLabel) -> int:
        return sum(self.counts[_LABEL_INDEX[label]])


def _class_f1(cm: ConfusionMatrix, idx: int) -> float:
    tp = cm.counts[idx][idx]
    fp = sum(cm.counts[r][idx] for r in range(3) if r != idx)
    fn = sum(cm.counts[idx][c] for c in range(3) if c != idx)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(cm: ConfusionMatrix, average: str = "macro") -> float:
    """F1 over the three classes. Default is the unweighted macro mean;
    "micro" and "weighted" averages are available behind the switch.

    A class with no true and no predicted instances contributes 0, so a
    degenerate predictor cannot inflate the score.
    """
    total = cm.total
    if total == 0:
        raise DomainError("cannot evaluate an empty confusion matrix")
    if average == "macro":
        return sum(_class_f1(cm, i) for i in range(3)) / 3.0
    if average == "micro":
        # single-label multiclass: micro P = micro R = accuracy
        return sum(cm.counts[i][i] for i in range(3)) / total
    if average == "weighted":
        return sum(
            sum(cm.counts[i]) / total * _class_f1(cm, i) for i in range(3)
        )
    raise DomainError(f"unknown average {average!r}; expected macro, micro, or weighted")


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """Evaluation summary: confusion matrix, macro-F1, per-class F1, and
    optional per-split / per-truth-label sub-reports."""

    confusion: ConfusionMatrix
    macro_f1: float
    per_class_f1: Mapping[MovementLabel, float]
    n_samples: int
    k: Optional[int] = None
    per_split: Optional[Mapping[str, "EvalReport"]] = None
    per_label: Optional[Mapping[str, "EvalReport"]] = None


def evaluate_pairs(
    pairs: Iterable[tuple[MovementLabel, MovementLabel]], k: Optional[int] = None
) -> EvalReport:
    """Build a flat report from (truth, predicted) pairs."""
    cm = ConfusionMatrix.from_pairs(pairs)
    if cm.total == 0:
        raise DomainError("cannot evaluate zero samples")
    per_class = {label: _class_f1(cm, i) for i, label in enumerate(LABEL_ORDER)}
    return EvalReport(
        confusion=cm,
        macro_f1=macro_f1(cm),
        per_class_f1=per_class,
        n_samples=cm.total,
        k=k,
    )


def majority_vote(votes: Sequence[MovementLabel]) -> MovementLabel:
    """Label with the strictly largest count; ties resolve by fixed
    precedence hold > down > up."""
    tally: dict[MovementLabel, int] = {}
    for v in votes:
        label = _check_label(v, "vote")
        tally[label] = tally.get(label, 0) + 1
    if not tally:
        raise DomainError("cannot vote on an empty ballot")
    return min(tally, key=lambda label: (-tally[label], tie_rank(label)))


def vote_curve(
    ballots: Sequence[Ballot],
    truths: Mapping[str, MovementLabel],
    ks: Sequence[int] = DEFAULT_VOTE_KS,
    seed: int = 0,
) -> dict[int, EvalReport]:
    """Evaluate majority voting at each vote count k.

    For each k and sample, k votes are drawn without replacement from the
    sample's stored prediction pool with a sub-seed derived from
    (seed, k, sample_id), so each k's subsample is reproducible and
    independent of which other ks are requested.
    """
    ks = list(ks)
    if not ks:
        raise DomainError("ks must be non-empty")
    for k in ks:
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise DomainError(f"every k must be a positive integer, got {k!r}")
    if not ballots:
        raise DomainError("no ballots to evaluate")
    max_k = max(ks)
    for ballot in ballots:
        if ballot.sample_id not in truths:
            raise ValidationError(f"no truth label for sample {ballot.sample_id}")
        if len(ballot.votes) < max_k:
            raise DomainError(
                f"sample {ballot.sample_id} has {len(ballot.votes)} votes, "
                f"needs at least {max_k}"
            )
    reports: dict[int, EvalReport] = {}
    for k in sorted(set(ks)):
        pairs = []
        for ballot in ballots:
            rng = random.Random(f"{seed}:vote:{k}:{ballot.sample_id}")
            chosen = rng.sample(list(ballot.votes), k)
            pairs.append(
                (_check_label(truths[ballot.sample_id], "truth"), majority_vote(chosen))
            )
        reports[k] = evaluate_pairs(pairs, k=k)
    return reports


@dataclasses.dataclass(frozen=True)
class RandomBound:
    """Macro-F1 band of uniform random guessing over the given seeds."""

    mean: float
    min: float
    max: float
    per_seed: Sequence[float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_seed", tuple(self.per_seed))


def random_bound(
    samples: Sequence[LabeledSample], seeds: Sequence[int] = DEFAULT_RANDOM_SEEDS
) -> RandomBound:
    """Evaluate a uniform random guesser once per seed and report the
    mean/min/max macro-F1 across seeds."""
    samples = list(samples)
    if not samples:
        raise DomainError("random_bound needs at least one sample")
    if not seeds:
        raise DomainError("random_bound needs at least one seed")
    labels = list(LABEL_ORDER)
    scores = []
    for seed in seeds:
        rng = random.Random(seed)
        pairs = [(s.label, rng.choice(labels)) for s in samples]
        scores.append(evaluate_pairs(pairs).macro_f1)
    return RandomBound(
        mean=sum(scores) / len(scores), min=min(scores), max=max(scores), per_seed=scores
    )


def grouped_report(
    predictions: Mapping[str, MovementLabel], samples: Sequence[LabeledSample]
) -> EvalReport:
    """Global report plus per-split and per-truth-label sub-reports.

    Predictions join to samples by sample_id; a missing or extraneous id
    is a validation error so silently misaligned evaluations cannot
    happen.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("grouped_report needs at least one sample")
    ids = {s.sample_id for s in samples}
    missing = sorted(ids - set(predictions))
    if missing:
        raise ValidationError(f"missing predictions for samples: {missing[:5]}")
    extra = sorted(set(predictions) - ids)
    if extra:
        raise ValidationError(f"predictions for unknown samples: {extra[:5]}")
    pairs = []
    by_split: dict[str, list[tuple[MovementLabel, MovementLabel]]] = {}
    by_label: dict[str, list[tuple[MovementLabel, MovementLabel]]] = {}
    for s in samples:
        pair = (s.label, _check_label(predictions[s.sample_id], "prediction"))
        pairs.append(pair)
        by_split.setdefault(s.split.value, []).append(pair)
        by_label.setdefault(s.label.value, []).append(pair)
    flat = evaluate_pairs(pairs)
    return dataclasses.replace(
        flat,
        per_split={name: evaluate_pairs(group) for name, group in sorted(by_split.items())},
        per_label={name: evaluate_pairs(group) for name, group in sorted(by_label.items())},
    )
