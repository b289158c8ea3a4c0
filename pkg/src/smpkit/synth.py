"""Seeded synthetic market data and simulated policy rollouts.

A desk-scale stand-in for a real price corpus: geometric-random-walk
OHLCV bars plus structured responses whose per-class accuracy is
configurable. All randomness derives from one seed through named
sub-seeds (one per stock, one per sample), so any subset of the output
is reproducible on its own.
"""

from __future__ import annotations

import datetime
import math
import random
from typing import Mapping, Sequence, Union

from .errors import DomainError
from .labeling import LabeledSample, MovementLabel, PriceBar
from .parsing import ParsedResponse, render
from .voting import LABEL_ORDER

START_DATE = datetime.date(2024, 1, 2)

# Open region per label for generated change_pct values: strictly inside
# the label's band so float noise can never flip the class.
_CHANGE_RANGE = {
    MovementLabel.UP: (3.5, 9.5),
    MovementLabel.DOWN: (-9.5, -3.5),
    MovementLabel.HOLD: (-2.5, 2.5),
}

AccuracyProfile = Union[float, Mapping[MovementLabel, float]]


def _normalize_accuracy(accuracy: AccuracyProfile) -> dict[MovementLabel, float]:
    if isinstance(accuracy, Mapping):
        profile = dict(accuracy)
        missing = [l.value for l in LABEL_ORDER if l not in profile]
        if missing:
            raise DomainError(f"accuracy profile missing labels: {', '.join(missing)}")
        extra = [k for k in profile if k not in LABEL_ORDER]
        if extra:
            raise DomainError(f"accuracy profile has unknown keys: {extra!r}")
    else:
        profile = {label: float(accuracy) for label in LABEL_ORDER}
    for label, p in profile.items():
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"accuracy for {label.value} must be in [0, 1], got {p!r}")
        profile[label] = p
    return profile


def synth_prices(
    seed: int, n_stocks: int, n_days: int, volatility: float = 0.04
) -> dict[str, list[PriceBar]]:
    """Generate OHLCV bars for n_stocks stocks over n_days calendar days.

    Each stock's series flows from its own sub-seed, so a stock's bars do
    not change when the universe grows. Zero volatility collapses every
    price to the starting level (all moves become exact holds).
    """
    if n_stocks < 1:
        raise DomainError(f"n_stocks must be >= 1, got {n_stocks}")
    if n_days < 1:
        raise DomainError(f"n_days must be >= 1, got {n_days}")
    volatility = float(volatility)
    if not math.isfinite(volatility) or volatility < 0:
        raise DomainError(f"volatility must be a non-negative real, got {volatility!r}")
    out: dict[str, list[PriceBar]] = {}
    for i in range(n_stocks):
        stock_id = f"S{i:03d}"
        rng = random.Random(f"{seed}:prices:{stock_id}")
        prev_close = rng.uniform(20.0, 200.0)
        bars = []
        for day in range(n_days):
            opening = prev_close * math.exp(volatility * rng.gauss(0.0, 1.0))
            closing = opening * math.exp(volatility * rng.gauss(0.0, 1.0))
            body_high = max(opening, closing)
            body_low = min(opening, closing)
            high = body_high * math.exp(abs(rng.gauss(0.0, 1.0)) * volatility / 2.0)
            low = body_low * math.exp(-abs(rng.gauss(0.0, 1.0)) * volatility / 2.0)
            bars.append(
                PriceBar(
                    stock_id=stock_id,
                    date=START_DATE + datetime.timedelta(days=day),
                    open=opening,
                    high=high,
                    low=low,
                    close=closing,
                    volume=float(rng.randrange(10_000, 1_000_000)),
                )
            )
            prev_close = closing
        out[stock_id] = bars
    return out


def synth_rollouts(
    seed: int,
    samples: Sequence[LabeledSample],
    n_rollouts: int = 8,
    accuracy: AccuracyProfile = 0.6,
) -> list[dict]:
    """Simulate n_rollouts structured responses per labeled sample.

    Each vote predicts the truth label with the profile's probability for
    that class, otherwise one of the other two labels uniformly. The
    response text is always well-formed and internally consistent; only
    the predicted label can be wrong.
    """
    if n_rollouts < 1:
        raise DomainError(f"n_rollouts must be >= 1, got {n_rollouts}")
    profile = _normalize_accuracy(accuracy)
    rows = []
    for sample in samples:
        rng = random.Random(f"{seed}:rollouts:{sample.sample_id}")
        for i in range(n_rollouts):
            if rng.random() < profile[sample.label]:
                predicted = sample.label
            else:
                predicted = rng.choice([l for l in LABEL_ORDER if l is not sample.label])
            lo, hi = _CHANGE_RANGE[predicted]
            change = rng.uniform(lo, hi)
            if predicted is MovementLabel.UP:
                up_score = rng.uniform(6.0, 10.0)
                down_score = rng.uniform(0.0, 4.0)
            elif predicted is MovementLabel.DOWN:
                up_score = rng.uniform(0.0, 4.0)
                down_score = rng.uniform(6.0, 10.0)
            else:
                up_score = rng.uniform(3.0, 7.0)
                down_score = rng.uniform(3.0, 7.0)
            parsed = ParsedResponse(
                reasoning_text=(
                    f"Momentum review for {sample.sample_id}, rollout {i}: "
                    f"flow and volatility point {predicted.value}."
                ),
                up_score=up_score,
                down_score=down_score,
                change_pct=change,
                answer=predicted,
            )
            rows.append(
                {
                    "id": f"{sample.sample_id}#{i}",
                    "sample_id": sample.sample_id,
                    "text": render(parsed),
                    "truth_label": sample.label.value,
                }
            )
    return rows
