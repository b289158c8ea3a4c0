"""Structured response grammar: parse, format-report, render.

A well-formed response is, in order:

    <think>free reasoning, optional</think>
    <score>
    up: <real in [0,10]>
    down: <real in [0,10]>
    </score>
    <change_pct>signed decimal percent</change_pct>
    <answer>up|down|hold</answer>

parse() never raises on arbitrary text; every failure is recorded in the
FormatReport. The think block is scanned to its closing tag first so
tag-like text inside it cannot terminate the other blocks.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

from .errors import DomainError
from .labeling import MovementLabel

_MANDATORY_TAGS = ("score", "change_pct", "answer")
_BLOCK_RES = {tag: re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL) for tag in _MANDATORY_TAGS}
_SCORE_LINE_RE = re.compile(r"^(up|down)\s*:\s*(.*)$", re.IGNORECASE)
# optional sign, decimal point, exponent; no thousands separators
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

SCORE_MIN = 0.0
SCORE_MAX = 10.0


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str


@dataclass(frozen=True)
class FormatReport:
    parse_ok: bool
    missing_fields: tuple[str, ...]
    violations: tuple[Violation, ...]


@dataclass(frozen=True)
class ParsedResponse:
    """Structured prediction extracted from one response."""

    reasoning_text: str
    up_score: float
    down_score: float
    change_pct: float
    answer: MovementLabel

    def __post_init__(self) -> None:
        for name in ("up_score", "down_score"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise DomainError(f"{name} must lie in [{SCORE_MIN}, {SCORE_MAX}], got {value!r}")
            object.__setattr__(self, name, float(value))
        if not (isinstance(self.change_pct, (int, float)) and math.isfinite(self.change_pct)):
            raise DomainError(f"change_pct must be finite, got {self.change_pct!r}")
        object.__setattr__(self, "change_pct", float(self.change_pct))
        if not isinstance(self.answer, MovementLabel):
            raise DomainError(f"answer must be a MovementLabel, got {self.answer!r}")

    @property
    def evidence_scores(self) -> tuple[float, float]:
        return (self.up_score, self.down_score)


def _parse_number(raw: str) -> Optional[float]:
    """Float from the grammar: optional sign/decimal/exponent, percent stripped."""
    token = raw.strip()
    if token.endswith("%"):
        token = token[:-1].rstrip()
    if not token or not _NUMBER_RE.fullmatch(token):
        return None
    return float(token)


def _split_think(text: str) -> tuple[str, str, list[Violation]]:
    """Returns (reasoning, text with the think block removed, violations)."""
    violations: list[Violation] = []
    open_at = text.find("<think>")
    if open_at == -1:
        return "", text, violations
    close_at = text.find("</think>", open_at)
    if close_at == -1:
        violations.append(Violation("think_unclosed", "<think> has no closing tag"))
        # everything after the open tag is swallowed as reasoning
        return text[open_at + len("<think>"):], text[:open_at], violations
    reasoning = text[open_at + len("<think>"):close_at]
    remainder = text[:open_at] + text[close_at + len("</think>"):]
    if "<think>" in remainder:
        violations.append(Violation("duplicate_tag", "more than one <think> block"))
    return reasoning, remainder, violations


def _extract_single(tag: str, scan_text: str, missing: list[str], violations: list[Violation]) -> Optional[str]:
    """Inner text of the single <tag> block, recording absence or duplication."""
    opens = scan_text.count(f"<{tag}>")
    matches = _BLOCK_RES[tag].findall(scan_text)
    if opens >= 2:
        violations.append(Violation("duplicate_tag", f"more than one <{tag}> tag"))
        return None
    if opens == 1 and not matches:
        violations.append(Violation("unclosed_tag", f"<{tag}> has no closing tag"))
        return None
    if not matches:
        missing.append(tag)
        return None
    return matches[0]


def _parse_score_block(inner: str, missing: list[str], violations: list[Violation]) -> dict[str, float]:
    values: dict[str, float] = {}
    seen: set[str] = set()
    for raw_line in inner.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        matched = _SCORE_LINE_RE.match(line)
        if not matched:
            violations.append(Violation("score_line", f"unrecognized line in <score>: {line!r}"))
            continue
        key = matched.group(1).lower()
        if key in seen:
            violations.append(Violation("duplicate_score_line", f"repeated {key!r} line in <score>"))
            continue
        seen.add(key)
        value = _parse_number(matched.group(2))
        if value is None or not math.isfinite(value):
            violations.append(Violation("score_number", f"{key} score is not a number: {matched.group(2)!r}"))
            continue
        if not (SCORE_MIN <= value <= SCORE_MAX):
            violations.append(
                Violation("score_range", f"{key} score {value!r} outside [{SCORE_MIN}, {SCORE_MAX}]")
            )
            continue
        values[key] = value
    for key in ("up", "down"):
        if key not in seen:
            missing.append(f"score.{key}")
    return values


def parse(text: str) -> tuple[Optional[ParsedResponse], FormatReport]:
    """Parse a raw response. Never raises; failures land in the FormatReport."""
    missing: list[str] = []
    violations: list[Violation] = []

    reasoning, scan_text, think_violations = _split_think(text)
    violations.extend(think_violations)

    score_inner = _extract_single("score", scan_text, missing, violations)
    scores: dict[str, float] = {}
    if score_inner is not None:
        scores = _parse_score_block(score_inner, missing, violations)

    change_inner = _extract_single("change_pct", scan_text, missing, violations)
    change_pct: Optional[float] = None
    if change_inner is not None:
        change_pct = _parse_number(change_inner)
        if change_pct is None or not math.isfinite(change_pct):
            violations.append(Violation("change_pct_number", f"not a finite decimal: {change_inner.strip()!r}"))
            change_pct = None

    answer_inner = _extract_single("answer", scan_text, missing, violations)
    answer: Optional[MovementLabel] = None
    if answer_inner is not None:
        token = answer_inner.strip().lower()
        if token in ("up", "down", "hold"):
            answer = MovementLabel(token)
        else:
            violations.append(Violation("answer_token", f"not one of up|down|hold: {answer_inner.strip()!r}"))

    parse_ok = not missing and not violations
    report = FormatReport(
        parse_ok=parse_ok, missing_fields=tuple(missing), violations=tuple(violations)
    )
    if not parse_ok:
        return None, report
    parsed = ParsedResponse(
        reasoning_text=reasoning,
        up_score=scores["up"],
        down_score=scores["down"],
        change_pct=change_pct,
        answer=answer,
    )
    return parsed, report


def format_score(report: FormatReport) -> int:
    """Binary schema-adherence score: 1 iff the response parsed cleanly."""
    return 1 if report.parse_ok else 0


def render(parsed: ParsedResponse) -> str:
    """Canonical text such that parse(render(p)) reproduces p exactly.

    Numbers are emitted in shortest round-trip decimal form. An empty
    reasoning text omits the think block entirely.
    """
    if "</think>" in parsed.reasoning_text:
        raise DomainError("reasoning_text must not contain '</think>'")
    lines = []
    if parsed.reasoning_text:
        lines.append(f"<think>{parsed.reasoning_text}</think>")
    lines.append("<score>")
    lines.append(f"up: {parsed.up_score!r}")
    lines.append(f"down: {parsed.down_score!r}")
    lines.append("</score>")
    lines.append(f"<change_pct>{parsed.change_pct!r}</change_pct>")
    lines.append(f"<answer>{parsed.answer.value}</answer>")
    return "\n".join(lines)
