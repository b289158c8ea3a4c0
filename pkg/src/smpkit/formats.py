"""File formats for the pipeline: prices CSV, JSON Lines, report docs.

Readers validate strictly and fail with path:line diagnostics; writers
emit fixed key orders and shortest round-trip float rendering so
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import datetime
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .curriculum import DifficultyRecord
from .errors import EngineError, ValidationError
from .labeling import LabeledSample, MovementLabel, PriceBar, SplitTag
from .rewards import RewardBreakdown
from .voting import LABEL_ORDER, Ballot, EvalReport, RandomBound

PathLike = Union[str, Path]

PRICE_HEADER = ("stock_id", "date", "open", "high", "low", "close", "volume")
REPORT_CSV_HEADER = ("section", "key", "n_samples", "macro_f1", "f1_hold", "f1_down", "f1_up")


def _fail(path: PathLike, line_no: int, message: str) -> ValidationError:
    return ValidationError(f"{path}:{line_no}: {message}")


def _parse_float(raw: str, path: PathLike, line_no: int, field: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise _fail(path, line_no, f"field {field!r} is not a number: {raw!r}") from None


def _parse_date(raw: str, path: PathLike, line_no: int, field: str = "date") -> datetime.date:
    try:
        return datetime.date.fromisoformat(raw)
    except ValueError:
        raise _fail(path, line_no, f"field {field!r} is not an ISO date: {raw!r}") from None


def read_price_csv(path: PathLike) -> dict[str, list[PriceBar]]:
    """Read OHLCV bars grouped by stock, preserving file order."""
    out: dict[str, list[PriceBar]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _fail(path, 1, "empty file, expected a header row") from None
        if tuple(header) != PRICE_HEADER:
            raise _fail(path, 1, f"bad header {header!r}, expected {','.join(PRICE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PRICE_HEADER):
                raise _fail(path, line_no, f"expected {len(PRICE_HEADER)} fields, got {len(row)}")
            stock_id, date_s, open_s, high_s, low_s, close_s, volume_s = row
            date = _parse_date(date_s, path, line_no)
            fields = {
                name: _parse_float(raw, path, line_no, name)
                for name, raw in (
                    ("open", open_s), ("high", high_s), ("low", low_s),
                    ("close", close_s), ("volume", volume_s),
                )
            }
            try:
                bar = PriceBar(stock_id=stock_id, date=date, **fields)
            except EngineError as exc:
                raise _fail(path, line_no, str(exc)) from None
            out.setdefault(stock_id, []).append(bar)
    return out


def write_price_csv(path: PathLike, bars_by_stock: Mapping[str, Sequence[PriceBar]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PRICE_HEADER)
        for stock_id, bars in bars_by_stock.items():
            for bar in bars:
                writer.writerow(
                    [
                        stock_id,
                        bar.date.isoformat(),
                        repr(bar.open),
                        repr(bar.high),
                        repr(bar.low),
                        repr(bar.close),
                        repr(bar.volume),
                    ]
                )


def _iter_jsonl(path: PathLike, required: Sequence[str], optional: Sequence[str] = ()):
    """Yield (line_no, object) for each JSONL row, enforcing the schema."""
    allowed = set(required) | set(optional)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _fail(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise _fail(path, line_no, f"expected a JSON object, got {type(obj).__name__}")
            missing = [k for k in required if k not in obj]
            if missing:
                raise _fail(path, line_no, f"missing keys: {', '.join(missing)}")
            unknown = sorted(set(obj) - allowed)
            if unknown:
                raise _fail(path, line_no, f"unknown keys: {', '.join(unknown)}")
            yield line_no, obj


def _write_jsonl(path: PathLike, rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _label_from(raw: object, path: PathLike, line_no: int, field: str) -> MovementLabel:
    if not isinstance(raw, str):
        raise _fail(path, line_no, f"field {field!r} must be a string, got {raw!r}")
    try:
        return MovementLabel.from_str(raw)
    except Exception as exc:
        raise _fail(path, line_no, str(exc)) from None


def read_samples(path: PathLike) -> list[LabeledSample]:
    out = []
    required = ("sample_id", "stock_id", "date", "change_pct", "label", "split")
    for line_no, obj in _iter_jsonl(path, required):
        date = _parse_date(obj["date"], path, line_no)
        label = _label_from(obj["label"], path, line_no, "label")
        try:
            sample = LabeledSample(
                stock_id=obj["stock_id"],
                date=date,
                change_pct=float(obj["change_pct"]),
                label=label,
                split=SplitTag(obj["split"]),
            )
        except Exception as exc:
            raise _fail(path, line_no, str(exc)) from None
        if obj["sample_id"] != sample.sample_id:
            raise _fail(
                path, line_no,
                f"sample_id {obj['sample_id']!r} does not match "
                f"stock_id/date ({sample.sample_id!r})",
            )
        out.append(sample)
    return out


def write_samples(path: PathLike, samples: Iterable[LabeledSample]) -> None:
    _write_jsonl(
        path,
        (
            {
                "sample_id": s.sample_id,
                "stock_id": s.stock_id,
                "date": s.date.isoformat(),
                "change_pct": s.change_pct,
                "label": s.label.value,
                "split": s.split.value,
            }
            for s in samples
        ),
    )


def read_rollouts(path: PathLike) -> list[dict]:
    """Rollout rows: id, text, truth_label, optional sample_id."""
    out = []
    for line_no, obj in _iter_jsonl(path, ("id", "text", "truth_label"), optional=("sample_id",)):
        if not isinstance(obj["id"], str) or not obj["id"]:
            raise _fail(path, line_no, f"field 'id' must be a non-empty string, got {obj['id']!r}")
        if not isinstance(obj["text"], str):
            raise _fail(path, line_no, "field 'text' must be a string")
        row = {
            "id": obj["id"],
            "sample_id": obj.get("sample_id", obj["id"].split("#", 1)[0]),
            "text": obj["text"],
            "truth_label": _label_from(obj["truth_label"], path, line_no, "truth_label").value,
        }
        out.append(row)
    return out


def write_rollouts(path: PathLike, rows: Iterable[Mapping]) -> None:
    _write_jsonl(
        path,
        (
            {
                "id": r["id"],
                "sample_id": r["sample_id"],
                "text": r["text"],
                "truth_label": r["truth_label"],
            }
            for r in rows
        ),
    )


def read_scores(path: PathLike) -> list[tuple[str, RewardBreakdown]]:
    out = []
    required = ("id", "format", "accuracy", "consistency", "total")
    for line_no, obj in _iter_jsonl(path, required):
        try:
            breakdown = RewardBreakdown(
                format=obj["format"],
                accuracy=obj["accuracy"],
                consistency=obj["consistency"],
                total=float(obj["total"]),
            )
        except Exception as exc:
            raise _fail(path, line_no, str(exc)) from None
        out.append((obj["id"], breakdown))
    return out


def write_scores(path: PathLike, rows: Iterable[tuple[str, RewardBreakdown]]) -> None:
    _write_jsonl(
        path,
        (
            {
                "id": rollout_id,
                "format": b.format,
                "accuracy": b.accuracy,
                "consistency": b.consistency,
                "total": b.total,
            }
            for rollout_id, b in rows
        ),
    )


def read_reward_groups(path: PathLike) -> list[tuple[str, list[float]]]:
    """Read (group_id, rewards) rows for advantage computation."""
    out = []
    for line_no, obj in _iter_jsonl(path, ("group_id", "rewards")):
        group_id = obj["group_id"]
        if not isinstance(group_id, str) or not group_id:
            raise _fail(path, line_no, "field 'group_id' must be a non-empty string")
        rewards_raw = obj["rewards"]
        if not isinstance(rewards_raw, list):
            raise _fail(path, line_no, "field 'rewards' must be a list of numbers")
        rewards = []
        for value in rewards_raw:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise _fail(path, line_no, "field 'rewards' must be a list of numbers")
            rewards.append(float(value))
        out.append((group_id, rewards))
    return out


def write_advantages(path: PathLike, rows: Iterable[tuple[str, list[float]]]) -> None:
    _write_jsonl(
        path,
        (
            {"group_id": group_id, "advantages": advantages}
            for group_id, advantages in rows
        ),
    )


def read_difficulty_records(path: PathLike) -> list[DifficultyRecord]:
    out = []
    for line_no, obj in _iter_jsonl(path, ("sample_id", "n_correct"), optional=("n_rollouts",)):
        try:
            out.append(
                DifficultyRecord(
                    sample_id=obj["sample_id"],
                    n_correct=obj["n_correct"],
                    n_rollouts=obj.get("n_rollouts", 8),
                )
            )
        except Exception as exc:
            raise _fail(path, line_no, str(exc)) from None
    return out


def write_curriculum_rows(
    path: PathLike, rows: Iterable[tuple[DifficultyRecord, Optional[int]]]
) -> None:
    _write_jsonl(
        path,
        (
            {
                "sample_id": record.sample_id,
                "bin": record.bin.value,
                "difficulty": record.difficulty,
                "rank": rank,
            }
            for record, rank in rows
        ),
    )


def read_ballots(path: PathLike) -> list[Ballot]:
    out = []
    for line_no, obj in _iter_jsonl(path, ("sample_id", "votes")):
        votes_raw = obj["votes"]
        if not isinstance(votes_raw, list):
            raise _fail(path, line_no, "field 'votes' must be a list of labels")
        votes = tuple(_label_from(v, path, line_no, "votes") for v in votes_raw)
        try:
            out.append(Ballot(sample_id=obj["sample_id"], votes=votes))
        except EngineError as exc:
            raise _fail(path, line_no, str(exc)) from None
    return out


def write_ballots(path: PathLike, ballots: Iterable[Ballot]) -> None:
    _write_jsonl(
        path,
        (
            {"sample_id": b.sample_id, "votes": [v.value for v in b.votes]}
            for b in ballots
        ),
    )


def write_winners(path: PathLike, winners: Iterable[tuple[str, MovementLabel]]) -> None:
    _write_jsonl(
        path, ({"sample_id": sid, "winner": label.value} for sid, label in winners)
    )


def report_to_dict(report: EvalReport) -> dict:
    """Flatten one report level; sub-reports are flattened by the caller."""
    doc = {
        "n_samples": report.n_samples,
        "macro_f1": report.macro_f1,
        "per_class_f1": {label.value: report.per_class_f1[label] for label in LABEL_ORDER},
        "confusion": [list(row) for row in report.confusion.counts],
    }
    if report.k is not None:
        doc["k"] = report.k
    return doc


def random_bound_to_dict(bound: RandomBound) -> dict:
    return {
        "mean": bound.mean,
        "min": bound.min,
        "max": bound.max,
        "per_seed": list(bound.per_seed),
    }


def write_json(path: PathLike, obj: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _report_csv_row(section: str, key: str, doc: Mapping) -> list:
    f1 = doc["per_class_f1"]
    return [
        section,
        key,
        doc["n_samples"],
        repr(doc["macro_f1"]),
        repr(f1["hold"]),
        repr(f1["down"]),
        repr(f1["up"]),
    ]


def write_report_csv(path: PathLike, report_doc: Mapping) -> None:
    """Flatten a report document into plot-ready CSV rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_CSV_HEADER)
        if "global" in report_doc:
            writer.writerow(_report_csv_row("global", "", report_doc["global"]))
        for section in ("per_k", "per_split", "per_label"):
            for key, doc in report_doc.get(section, {}).items():
                writer.writerow(_report_csv_row(section, str(key), doc))
