"""Price-series labeling: change percentages, movement classes, splits.

The movement of a trading day is the signed percent change from the
previous day's close to the current day's open. The three-class rule is
strict at both thresholds: up above +3, down below -3, hold on and between
the boundaries. Everything downstream (rewards, voting, evaluation) keys
off the MovementLabel defined here.
"""

from __future__ import annotations

import enum
import math
import random
import warnings
from dataclasses import dataclass, replace
from datetime import date as Date
from typing import Iterable, Mapping, Sequence

from .errors import DomainError, InsufficientDataError, ValidationError

UP_THRESHOLD = 3.0
DOWN_THRESHOLD = -3.0

DEFAULT_SIMILARITY_WINDOW = 60
DEFAULT_TOP_K = 3


class MovementLabel(enum.Enum):
    """Three-class movement call. Tie-break total order: hold < down < up."""

    HOLD = "hold"
    DOWN = "down"
    UP = "up"

    @classmethod
    def from_str(cls, raw: str) -> "MovementLabel":
        token = raw.strip().lower()
        for member in cls:
            if member.value == token:
                return member
        raise DomainError(f"unknown movement label: {raw!r}")


# index doubles as the deterministic tie-break order
_TIE_RANK = {MovementLabel.HOLD: 0, MovementLabel.DOWN: 1, MovementLabel.UP: 2}


def tie_rank(label: MovementLabel) -> int:
    """Position of label in the fixed total order hold < down < up."""
    return _TIE_RANK[label]


class SplitTag(enum.Enum):
    TRAIN = "train"
    OOD_STOCK = "ood_stock"
    OOD_DATE = "ood_date"
    OOD_STOCK_DATE = "ood_stock_date"


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar range."""

    start: Date
    end: Date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValidationError(f"date range start {self.start} after end {self.end}")

    def __contains__(self, day: Date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class PriceBar:
    """One OHLCV observation for one stock on one trading day."""

    stock_id: str
    date: Date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def __post_init__(self) -> None:
        for name in ("open", "high", "low", "close"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{self.stock_id} {self.date}: {name} must be a positive finite price, got {value!r}")
        if self.volume < 0:
            raise ValidationError(f"{self.stock_id} {self.date}: volume must be non-negative, got {self.volume!r}")
        body_low = min(self.open, self.close)
        body_high = max(self.open, self.close)
        if not (self.low <= body_low and body_high <= self.high):
            raise ValidationError(
                f"{self.stock_id} {self.date}: low/high must bracket open/close "
                f"(low={self.low}, open={self.open}, close={self.close}, high={self.high})"
            )


@dataclass(frozen=True)
class LabeledSample:
    """One prediction target: the movement into this date's open."""

    stock_id: str
    date: Date
    change_pct: float
    label: MovementLabel
    split: SplitTag = SplitTag.TRAIN

    @property
    def sample_id(self) -> str:
        return f"{self.stock_id}:{self.date.isoformat()}"


@dataclass(frozen=True)
class IngestRecord:
    """Raw dataset-assembly record before completeness filtering."""

    stock_id: str
    date: Date
    prev_close: float | None
    open: float | None
    label: MovementLabel | None


def compute_change_pct(prev_close: float, open_price: float) -> float:
    """Signed percent change (open / prev_close - 1) * 100."""
    for name, value in (("prev_close", prev_close), ("open", open_price)):
        if not math.isfinite(value) or value <= 0:
            raise DomainError(f"{name} must be a positive finite price, got {value!r}")
    return (open_price / prev_close - 1.0) * 100.0


def classify(change_pct: float) -> MovementLabel:
    """Strict-threshold movement class: up above +3, down below -3, hold otherwise."""
    if not math.isfinite(change_pct):
        raise DomainError(f"change_pct must be finite, got {change_pct!r}")
    if change_pct > UP_THRESHOLD:
        return MovementLabel.UP
    if change_pct < DOWN_THRESHOLD:
        return MovementLabel.DOWN
    return MovementLabel.HOLD


def label_series(bars: Sequence[PriceBar]) -> list[LabeledSample]:
    """Label every consecutive pair of bars of one stock.

    Bars must be strictly ascending by date and share one stock_id.
    Calendar gaps are collapsed: consecutive bars are consecutive trading
    days. The first bar has no predecessor and yields no sample.
    """
    if not bars:
        return []
    stock_id = bars[0].stock_id
    for prev, cur in zip(bars, bars[1:]):
        if cur.stock_id != stock_id or prev.stock_id != stock_id:
            raise ValidationError(f"mixed stock_ids in series: {prev.stock_id!r} vs {cur.stock_id!r}")
        if cur.date == prev.date:
            raise ValidationError(f"{stock_id}: duplicate date {cur.date}")
        if cur.date < prev.date:
            raise ValidationError(f"{stock_id}: unsorted bars, dates must ascend (at {cur.date})")
    out = []
    for prev, cur in zip(bars, bars[1:]):
        change = compute_change_pct(prev.close, cur.open)
        out.append(
            LabeledSample(stock_id=stock_id, date=cur.date, change_pct=change, label=classify(change))
        )
    return out


def _log_returns_on_common_dates(
    target: Sequence[PriceBar], candidate: Sequence[PriceBar], window: int
) -> tuple[list[float], list[float]]:
    """Aligned daily log close-returns over the trailing window of shared dates."""
    target_by_date = {b.date: b.close for b in target}
    cand_by_date = {b.date: b.close for b in candidate}
    common = sorted(target_by_date.keys() & cand_by_date.keys())
    common = common[-(window + 1):]
    xs, ys = [], []
    for prev, cur in zip(common, common[1:]):
        xs.append(math.log(target_by_date[cur] / target_by_date[prev]))
        ys.append(math.log(cand_by_date[cur] / cand_by_date[prev]))
    return xs, ys


def _pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    cov = var_x = var_y = 0.0
    for x, y in zip(xs, ys):
        dx = x - mean_x
        dy = y - mean_y
        cov += dx * dy
        var_x += dx * dx
        var_y += dy * dy
    if var_x == 0.0 or var_y == 0.0:
        return None
    return cov / math.sqrt(var_x * var_y)


def similarity_scores(
    target: str,
    universe: Mapping[str, Sequence[PriceBar]],
    window: int = DEFAULT_SIMILARITY_WINDOW,
    k: int | None = None,
) -> list[tuple[str, float]]:
    """(stock_id, correlation) pairs ranked best-first; target excluded.

    Candidates whose aligned return series has zero variance are excluded
    with a warning. Fewer than 2 overlapping return observations with the
    target is an error naming the candidate.
    """
    if target not in universe:
        raise ValidationError(f"target {target!r} not present in universe")
    if window < 1:
        raise DomainError(f"window must be >= 1, got {window}")
    target_bars = universe[target]
    scored = []
    for stock_id in sorted(universe):
        if stock_id == target:
            continue
        xs, ys = _log_returns_on_common_dates(target_bars, universe[stock_id], window)
        if len(xs) < 2:
            raise InsufficientDataError(
                f"candidate {stock_id!r}: {len(xs)} overlapping return observations with {target!r}, need >= 2"
            )
        corr = _pearson(xs, ys)
        if corr is None:
            warnings.warn(f"candidate {stock_id!r} excluded: zero variance over the similarity window")
            continue
        scored.append((stock_id, corr))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    if k is not None:
        scored = scored[:k]
    return scored


def top_similar(
    target: str,
    universe: Mapping[str, Sequence[PriceBar]],
    window: int = DEFAULT_SIMILARITY_WINDOW,
    k: int = DEFAULT_TOP_K,
) -> list[str]:
    """The k most correlated stocks by daily log close-returns, best first."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    return [stock_id for stock_id, _ in similarity_scores(target, universe, window=window, k=k)]


def assign_splits(
    samples: Iterable[LabeledSample],
    ood_stocks: frozenset[str] | set[str],
    ood_dates: DateRange | None,
    ood_stock_holdout: str = "full",
) -> list[LabeledSample]:
    """Tag each sample by OOD membership. Pure and idempotent.

    ood_stock_holdout "full" excludes OOD stocks from train at every date;
    "eval_only" keeps their pre-OOD-date history in train. ood_dates may
    be None when no date holdout is wanted.
    """
    if ood_stock_holdout not in ("full", "eval_only"):
        raise ValidationError(f"ood_stock_holdout must be 'full' or 'eval_only', got {ood_stock_holdout!r}")
    out = []
    for sample in samples:
        in_stock = sample.stock_id in ood_stocks
        in_date = ood_dates is not None and sample.date in ood_dates
        if in_stock and in_date:
            tag = SplitTag.OOD_STOCK_DATE
        elif in_stock:
            tag = SplitTag.OOD_STOCK if ood_stock_holdout == "full" else SplitTag.TRAIN
        elif in_date:
            tag = SplitTag.OOD_DATE
        else:
            tag = SplitTag.TRAIN
        out.append(replace(sample, split=tag))
    return out


def balance_labels(samples: Sequence[LabeledSample], seed: int | str) -> list[LabeledSample]:
    """Seeded downsample of every class to the minority-class count.

    Output preserves the input order of the kept samples, so an already
    balanced input comes back unchanged.
    """
    by_label: dict[MovementLabel, list[int]] = {label: [] for label in MovementLabel}
    for index, sample in enumerate(samples):
        by_label[sample.label].append(index)
    for label in MovementLabel:
        if not by_label[label]:
            raise DomainError(f"cannot balance: class {label.value!r} has no samples")
    minority = min(len(indices) for indices in by_label.values())
    rng = random.Random(seed)
    kept: set[int] = set()
    for label in (MovementLabel.HOLD, MovementLabel.DOWN, MovementLabel.UP):
        kept.update(rng.sample(by_label[label], minority))
    return [samples[i] for i in sorted(kept)]


def filter_incomplete(
    records: Iterable[IngestRecord],
) -> tuple[list[IngestRecord], list[tuple[IngestRecord, str]]]:
    """Partition records into complete and dropped-with-reason.

    Mandatory fields are the price pair (prev_close, open) and the label.
    Reason codes: "missing_price", "missing_label".
    """
    kept: list[IngestRecord] = []
    dropped: list[tuple[IngestRecord, str]] = []
    for record in records:
        if record.prev_close is None or record.open is None:
            dropped.append((record, "missing_price"))
        elif record.label is None:
            dropped.append((record, "missing_label"))
        else:
            kept.append(record)
    return kept, dropped
