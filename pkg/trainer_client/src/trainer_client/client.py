"""HTTP client for the batch scoring service.

The client speaks the service's JSON wire protocol and nothing else: it
never recomputes rewards or advantages locally, and every numeric value in
a response is handed back exactly as the JSON parser produced it. That
keeps the client usable as a drop-in source of truth for a training loop;
if the service and the client ever disagree, the bug is in transport, not
in a silent local reimplementation.

Retry policy
------------

A request is retried only when retrying can plausibly help: transport
failures (connection refused, resets, timeouts) and 5xx responses. Any
4xx means the request itself is wrong and is surfaced immediately as a
:class:`~trainer_client.errors.ServiceError` with the service's message
verbatim. Backoff is exponential: the first retry waits ``backoff_base``
seconds and each further retry doubles the wait. Retry state lives
entirely in the call frame, so one client instance can be shared freely
across threads.

Batch caps are enforced before any traffic is sent. The service would
answer 429 anyway, but failing locally keeps an oversized batch from
burning a round trip and makes the failure mode deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import urllib.error
import urllib.request
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import (
    BatchTooLargeError,
    ProtocolError,
    ServiceError,
    TransportError,
)

DEFAULT_BASE_URL = "http://127.0.0.1:8787"
BASE_URL_ENV_VAR = "SMPKIT_BASE_URL"

_ITEM_KEYS = frozenset({"id", "response_text", "truth_label"})
_SCORE_RESULT_KEYS = frozenset({"id", "format", "accuracy", "consistency", "total"})


def _default_base_url() -> str:
    return os.environ.get(BASE_URL_ENV_VAR, DEFAULT_BASE_URL)


@dataclass(frozen=True)
class ClientConfig:
    """Connection and retry settings.

    ``base_url`` defaults to the ``SMPKIT_BASE_URL`` environment variable
    when that is set, otherwise to the service's default local address.
    Passing ``base_url`` explicitly always wins over the environment.

    ``timeout`` applies per attempt, not across the whole retry budget.
    ``on_retry`` is called as ``on_retry(attempt, reason)`` just before
    each backoff sleep, where ``attempt`` is the 1-based number of the
    attempt that failed; it exists so callers can log or count retries
    without the client keeping mutable state.
    """

    base_url: str = dataclasses.field(default_factory=_default_base_url)
    timeout: float = 10.0
    max_attempts: int = 3
    backoff_base: float = 0.25
    batch_cap: int = 4096
    on_retry: Callable[[int, Exception], None] | None = None

    def __post_init__(self):
        if not isinstance(self.base_url, str) or not self.base_url:
            raise ValueError("base_url must be a non-empty string")
        if not self.timeout > 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_base < 0:
            raise ValueError(f"backoff_base must be >= 0, got {self.backoff_base}")
        if self.batch_cap < 1:
            raise ValueError(f"batch_cap must be >= 1, got {self.batch_cap}")


@dataclass(frozen=True)
class ScoredRollout:
    """One scored response, mirroring the wire schema field for field.

    ``advantage`` is filled only by :meth:`ScoringClient.score_rollout_groups`,
    which joins each rollout with its group-normalized advantage; plain
    :meth:`ScoringClient.score_batch` leaves it ``None``.
    """

    id: str
    format: int
    accuracy: int
    consistency: int
    total: float
    advantage: float | None = None


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _service_error(status: int, raw: bytes) -> ServiceError | ProtocolError:
    """Build the error for a non-retryable 4xx response."""
    try:
        body = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        return ProtocolError(f"status {status} with a body that is not JSON")
    envelope = body.get("error") if isinstance(body, dict) else None
    if not isinstance(envelope, dict):
        return ProtocolError(f"status {status} without an error envelope")
    code = envelope.get("code")
    message = envelope.get("message")
    if not isinstance(code, str) or not isinstance(message, str):
        return ProtocolError(f"status {status} with a malformed error envelope")
    offending = envelope.get("id")
    if offending is not None and not isinstance(offending, str):
        return ProtocolError(f"status {status} with a non-string error id")
    return ServiceError(status, code, message, offending)


class ScoringClient:
    """Synchronous client for the scoring service.

    Instances hold only immutable configuration and are safe to share
    across threads; every call carries its own retry state.
    """

    def __init__(self, config: ClientConfig | None = None):
        self.config = config if config is not None else ClientConfig()

    # -- transport ---------------------------------------------------------

    def _post(self, path: str, payload: dict) -> dict:
        """POST ``payload`` as JSON, retrying per the retry policy."""
        body = json.dumps(payload).encode("utf-8")
        url = self.config.base_url.rstrip("/") + path
        attempts = self.config.max_attempts
        delay = self.config.backoff_base
        last_reason: Exception | None = None
        last_status: int | None = None
        for attempt in range(1, attempts + 1):
            try:
                request = urllib.request.Request(
                    url,
                    data=body,
                    headers={"Content-Type": "application/json"},
                    method="POST",
                )
                with urllib.request.urlopen(request, timeout=self.config.timeout) as response:
                    raw = response.read()
            except urllib.error.HTTPError as exc:
                status = exc.code
                raw_error = exc.read()
                if status >= 500:
                    last_reason, last_status = exc, status
                else:
                    raise _service_error(status, raw_error) from None
            except OSError as exc:
                # URLError subclasses OSError, as do timeouts and resets.
                last_reason, last_status = exc, None
            else:
                try:
                    parsed = json.loads(raw.decode("utf-8"))
                except (ValueError, UnicodeDecodeError):
                    raise ProtocolError(f"POST {path} returned a body that is not JSON") from None
                if not isinstance(parsed, dict):
                    raise ProtocolError(f"POST {path} returned {type(parsed).__name__}, expected an object")
                return parsed
            if attempt < attempts:
                if self.config.on_retry is not None:
                    self.config.on_retry(attempt, last_reason)
                if delay > 0:
                    time.sleep(delay)
                delay *= 2
        detail = f"status {last_status}" if last_status is not None else f"{type(last_reason).__name__}: {last_reason}"
        raise TransportError(
            f"POST {path} failed after {attempts} attempts ({detail})",
            status=last_status,
            attempts=attempts,
        ) from last_reason

    def _check_cap(self, size: int):
        if size > self.config.batch_cap:
            raise BatchTooLargeError(size, self.config.batch_cap)

    # -- operations --------------------------------------------------------

    def score_batch(
        self,
        rollouts: Sequence[Mapping],
        weights: Mapping[str, float] | None = None,
    ) -> list[ScoredRollout]:
        """Score one batch of rollouts, preserving request order.

        Each rollout is a mapping with exactly the wire keys ``id``,
        ``response_text``, and ``truth_label``. ``weights`` is forwarded
        verbatim when given; the service owns its validation.
        """
        items = [self._check_item(rollout, index) for index, rollout in enumerate(rollouts)]
        self._check_cap(len(items))
        payload: dict = {"items": items}
        if weights is not None:
            payload["weights"] = dict(weights)
        body = self._post("/v1/score", payload)
        return self._read_score_results(body, [item["id"] for item in items])

    def advantages_for_groups(
        self,
        groups: Sequence[tuple[str, Sequence[float]]],
        config: Mapping[str, float] | None = None,
    ) -> list[list[float]]:
        """Compute group-normalized advantages for reward groups.

        ``groups`` is a sequence of ``(group_id, rewards)`` pairs; the
        returned vectors are in the same order, validated against the
        echoed group ids. ``config`` is forwarded verbatim when given.
        """
        wire_groups = [self._check_group(group, index) for index, group in enumerate(groups)]
        self._check_cap(len(wire_groups))
        payload: dict = {"groups": wire_groups}
        if config is not None:
            payload["config"] = dict(config)
        body = self._post("/v1/advantage", payload)
        return self._read_advantage_results(body, wire_groups)

    def score_rollout_groups(
        self,
        groups: Sequence[tuple[str, Sequence[Mapping]]],
        weights: Mapping[str, float] | None = None,
        config: Mapping[str, float] | None = None,
    ) -> list[tuple[str, list[ScoredRollout]]]:
        """Score grouped rollouts and join each with its advantage.

        This is the shape a GRPO-style loop wants: all rollouts are scored
        in one batch, their totals are sent back as the reward groups, and
        each :class:`ScoredRollout` comes back with ``advantage`` filled.
        The rewards forwarded to the advantage call are the service's own
        totals, untouched.
        """
        flat: list[Mapping] = []
        sizes: list[tuple[str, int]] = []
        for index, group in enumerate(groups):
            group_id, rollouts = self._check_pair(group, index)
            rollouts = list(rollouts)
            sizes.append((group_id, len(rollouts)))
            flat.extend(rollouts)
        scored = self.score_batch(flat, weights)
        reward_groups: list[tuple[str, Sequence[float]]] = []
        cursor = 0
        for group_id, size in sizes:
            totals = [rollout.total for rollout in scored[cursor:cursor + size]]
            reward_groups.append((group_id, totals))
            cursor += size
        vectors = self.advantages_for_groups(reward_groups, config)
        joined: list[tuple[str, list[ScoredRollout]]] = []
        cursor = 0
        for (group_id, size), vector in zip(sizes, vectors):
            members = [
                dataclasses.replace(rollout, advantage=advantage)
                for rollout, advantage in zip(scored[cursor:cursor + size], vector)
            ]
            joined.append((group_id, members))
            cursor += size
        return joined

    def score_batches(
        self,
        batches: Sequence[Sequence[Mapping]],
        weights: Mapping[str, float] | None = None,
        max_workers: int = 4,
    ) -> list[list[ScoredRollout]]:
        """Score several batches concurrently, preserving batch order.

        A bounded thread pool issues the requests; each batch is still
        subject to the cap individually. The first failure propagates.
        """
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        if not batches:
            return []
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda batch: self.score_batch(batch, weights), batches))

    def health(self) -> dict:
        """Fetch the service health document. Never retried."""
        url = self.config.base_url.rstrip("/") + "/health"
        try:
            with urllib.request.urlopen(url, timeout=self.config.timeout) as response:
                raw = response.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"GET /health returned status {exc.code}", status=exc.code, attempts=1) from None
        except OSError as exc:
            raise TransportError(f"GET /health failed ({type(exc).__name__}: {exc})", status=None, attempts=1) from exc
        try:
            parsed = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            raise ProtocolError("GET /health returned a body that is not JSON") from None
        if not isinstance(parsed, dict):
            raise ProtocolError("GET /health returned a non-object body")
        return parsed

    # -- request validation ------------------------------------------------

    @staticmethod
    def _check_item(rollout: Mapping, index: int) -> dict:
        if not isinstance(rollout, Mapping):
            raise TypeError(f"rollout {index} is {type(rollout).__name__}, expected a mapping")
        keys = set(rollout.keys())
        if keys != _ITEM_KEYS:
            extra = sorted(keys - _ITEM_KEYS)
            missing = sorted(_ITEM_KEYS - keys)
            parts = []
            if missing:
                parts.append(f"missing {missing}")
            if extra:
                parts.append(f"unexpected {extra}")
            raise ValueError(f"rollout {index}: {', '.join(parts)}")
        if not isinstance(rollout["id"], str) or not rollout["id"]:
            raise ValueError(f"rollout {index}: id must be a non-empty string")
        return {key: rollout[key] for key in ("id", "response_text", "truth_label")}

    @staticmethod
    def _check_pair(group, index: int) -> tuple[str, Sequence]:
        try:
            group_id, members = group
        except (TypeError, ValueError):
            raise TypeError(f"group {index} must be a (group_id, members) pair") from None
        if not isinstance(group_id, str) or not group_id:
            raise ValueError(f"group {index}: group_id must be a non-empty string")
        if isinstance(members, (str, bytes)) or not isinstance(members, Iterable):
            raise TypeError(f"group {index} ({group_id!r}): members must be a sequence")
        return group_id, members

    @classmethod
    def _check_group(cls, group, index: int) -> dict:
        group_id, rewards = cls._check_pair(group, index)
        return {"group_id": group_id, "rewards": list(rewards)}

    # -- response validation -----------------------------------------------

    @staticmethod
    def _read_results(body: dict, path: str) -> list:
        results = body.get("results")
        if not isinstance(results, list):
            raise ProtocolError(f"POST {path} response has no results list")
        return results

    def _read_score_results(self, body: dict, expected_ids: list[str]) -> list[ScoredRollout]:
        results = self._read_results(body, "/v1/score")
        if len(results) != len(expected_ids):
            raise ProtocolError(
                f"score response has {len(results)} results for {len(expected_ids)} items"
            )
        scored: list[ScoredRollout] = []
        for row, expected_id in zip(results, expected_ids):
            if not isinstance(row, dict) or set(row.keys()) != _SCORE_RESULT_KEYS:
                raise ProtocolError(f"score result for {expected_id!r} has the wrong shape")
            if row["id"] != expected_id:
                raise ProtocolError(
                    f"score results out of order: got {row['id']!r}, expected {expected_id!r}"
                )
            for key in ("format", "accuracy", "consistency", "total"):
                if not _is_number(row[key]):
                    raise ProtocolError(f"score result for {expected_id!r} has a non-numeric {key}")
            scored.append(
                ScoredRollout(
                    id=row["id"],
                    format=row["format"],
                    accuracy=row["accuracy"],
                    consistency=row["consistency"],
                    total=row["total"],
                )
            )
        return scored

    def _read_advantage_results(self, body: dict, wire_groups: list[dict]) -> list[list[float]]:
        results = self._read_results(body, "/v1/advantage")
        if len(results) != len(wire_groups):
            raise ProtocolError(
                f"advantage response has {len(results)} results for {len(wire_groups)} groups"
            )
        vectors: list[list[float]] = []
        for row, sent in zip(results, wire_groups):
            expected_id = sent["group_id"]
            if not isinstance(row, dict) or set(row.keys()) != {"group_id", "advantages"}:
                raise ProtocolError(f"advantage result for {expected_id!r} has the wrong shape")
            if row["group_id"] != expected_id:
                raise ProtocolError(
                    f"advantage results out of order: got {row['group_id']!r}, expected {expected_id!r}"
                )
            vector = row["advantages"]
            if not isinstance(vector, list) or len(vector) != len(sent["rewards"]):
                raise ProtocolError(
                    f"advantage vector for {expected_id!r} does not match the group size"
                )
            if not all(_is_number(value) for value in vector):
                raise ProtocolError(f"advantage vector for {expected_id!r} has non-numeric entries")
            vectors.append(vector)
        return vectors
