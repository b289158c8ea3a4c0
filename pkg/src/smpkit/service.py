"""Stateless batch scoring service over HTTP/1.1 + JSON.

Wraps reward shaping, group advantages, and majority voting so external
trainers can call the engine without linking it. Responses are
bit-identical to in-process library calls: numbers pass through
json.dumps shortest round-trip rendering and nothing is re-rounded.

Error contract: structural problems (wrong shapes, unknown keys, bad
JSON) are bad_request/400; value-level rejections (duplicate ids, bad
labels, undersized groups, invalid weights) are validation_failed/422
with the offending id where one exists; batches beyond the cap are
overloaded/429; everything unexpected is internal/500. Rejection is
atomic per request, never partial.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import signal
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import __version__
from .errors import DomainError, EngineError
from .grpo import GrpoConfig, group_advantages
from .labeling import MovementLabel
from .rewards import RewardWeights, shape
from .voting import majority_vote

DEFAULT_BATCH_CAP = 4096
DEFAULT_PORT = 8787


@dataclasses.dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    batch_cap: int = DEFAULT_BATCH_CAP
    weights: RewardWeights = RewardWeights()
    grpo: GrpoConfig = GrpoConfig()

    def __post_init__(self) -> None:
        if not 0 <= self.port <= 65535:
            raise DomainError(f"port must be in [0, 65535], got {self.port}")
        if self.batch_cap < 1:
            raise DomainError(f"batch_cap must be >= 1, got {self.batch_cap}")


def config_digest(config: ServiceConfig) -> str:
    """Short digest of the numeric configuration, for health checks."""
    doc = {
        "batch_cap": config.batch_cap,
        "weights": {
            "alpha": config.weights.alpha,
            "beta": config.weights.beta,
            "gamma": config.weights.gamma,
        },
        "grpo": {
            "epsilon": config.grpo.epsilon,
            "kl_coef": config.grpo.kl_coef,
            "std_guard": config.grpo.std_guard,
        },
    }
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


class _Reject(Exception):
    """Maps a request problem to the wire error contract."""

    def __init__(self, status: int, code: str, message: str, offending_id: str = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.offending_id = offending_id


def _bad(message: str) -> _Reject:
    return _Reject(400, "bad_request", message)


def _invalid(message: str, offending_id: str = None) -> _Reject:
    return _Reject(422, "validation_failed", message, offending_id)


def _check_object(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise _bad(f"{where} must be a JSON object")
    return value


def _check_keys(obj: dict, required: set, optional: set, where: str) -> None:
    missing = sorted(required - set(obj))
    if missing:
        raise _bad(f"{where} missing keys: {', '.join(missing)}")
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise _bad(f"{where} has unknown keys: {', '.join(unknown)}")


def _check_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise _bad(f"{where} must be a string")
    return value


def _check_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _bad(f"{where} must be a number")
    return float(value)


def _check_batch(items, where: str, cap: int) -> list:
    if not isinstance(items, list):
        raise _bad(f"{where} must be a list")
    if len(items) > cap:
        raise _Reject(
            429, "overloaded", f"{where} has {len(items)} entries, cap is {cap}"
        )
    return items


def _label(raw, where: str, offending_id: str) -> MovementLabel:
    _check_str(raw, where)
    try:
        return MovementLabel.from_str(raw)
    except EngineError as exc:
        raise _invalid(str(exc), offending_id) from None


def handle_score(body: dict, config: ServiceConfig) -> dict:
    _check_object(body, "request body")
    _check_keys(body, {"items"}, {"weights"}, "request body")
    items = _check_batch(body["items"], "items", config.batch_cap)
    weights = config.weights
    if "weights" in body:
        override = _check_object(body["weights"], "weights")
        _check_keys(override, set(), {"alpha", "beta", "gamma"}, "weights")
        merged = {
            name: _check_number(override[name], f"weights.{name}")
            if name in override
            else getattr(weights, name)
            for name in ("alpha", "beta", "gamma")
        }
        try:
            weights = RewardWeights(**merged)
        except EngineError as exc:
            raise _invalid(str(exc)) from None
    seen = set()
    parsed = []
    for i, item in enumerate(items):
        _check_object(item, f"items[{i}]")
        _check_keys(item, {"id", "response_text", "truth_label"}, set(), f"items[{i}]")
        item_id = _check_str(item["id"], f"items[{i}].id")
        if not item_id:
            raise _bad(f"items[{i}].id must be non-empty")
        text = _check_str(item["response_text"], f"items[{i}].response_text")
        if item_id in seen:
            raise _invalid(f"duplicate id {item_id!r}", item_id)
        seen.add(item_id)
        truth = _label(item["truth_label"], f"items[{i}].truth_label", item_id)
        parsed.append((item_id, text, truth))
    results = []
    for item_id, text, truth in parsed:
        breakdown = shape(text, truth, weights)
        results.append(
            {
                "id": item_id,
                "format": breakdown.format,
                "accuracy": breakdown.accuracy,
                "consistency": breakdown.consistency,
                "total": breakdown.total,
            }
        )
    return {"results": results}


def handle_advantage(body: dict, config: ServiceConfig) -> dict:
    _check_object(body, "request body")
    _check_keys(body, {"groups"}, {"config"}, "request body")
    groups = _check_batch(body["groups"], "groups", config.batch_cap)
    grpo = config.grpo
    if "config" in body:
        override = _check_object(body["config"], "config")
        _check_keys(override, set(), {"epsilon", "kl_coef", "std_guard"}, "config")
        merged = {
            name: _check_number(override[name], f"config.{name}")
            if name in override
            else getattr(grpo, name)
            for name in ("epsilon", "kl_coef", "std_guard")
        }
        try:
            grpo = GrpoConfig(**merged)
        except EngineError as exc:
            raise _invalid(str(exc)) from None
    cleaned = []
    for i, group in enumerate(groups):
        _check_object(group, f"groups[{i}]")
        _check_keys(group, {"group_id", "rewards"}, set(), f"groups[{i}]")
        group_id = _check_str(group["group_id"], f"groups[{i}].group_id")
        rewards_raw = group["rewards"]
        if not isinstance(rewards_raw, list):
            raise _bad(f"groups[{i}].rewards must be a list")
        rewards = [
            _check_number(r, f"groups[{i}].rewards[{j}]") for j, r in enumerate(rewards_raw)
        ]
        if len(rewards) < 2:
            raise _invalid(
                f"group {group_id!r} has {len(rewards)} rewards, needs at least 2",
                group_id,
            )
        cleaned.append((group_id, rewards))
    results = []
    for group_id, rewards in cleaned:
        try:
            advantages = group_advantages(rewards, grpo.std_guard)
        except EngineError as exc:
            raise _invalid(str(exc), group_id) from None
        results.append({"group_id": group_id, "advantages": advantages})
    return {"results": results}


def handle_vote(body: dict, config: ServiceConfig) -> dict:
    _check_object(body, "request body")
    _check_keys(body, {"ballots"}, set(), "request body")
    ballots = _check_batch(body["ballots"], "ballots", config.batch_cap)
    cleaned = []
    for i, ballot in enumerate(ballots):
        _check_object(ballot, f"ballots[{i}]")
        _check_keys(ballot, {"sample_id", "votes"}, set(), f"ballots[{i}]")
        sample_id = _check_str(ballot["sample_id"], f"ballots[{i}].sample_id")
        votes_raw = ballot["votes"]
        if not isinstance(votes_raw, list):
            raise _bad(f"ballots[{i}].votes must be a list")
        if not votes_raw:
            raise _invalid(f"ballot {sample_id!r} has no votes", sample_id)
        votes = [_label(v, f"ballots[{i}].votes", sample_id) for v in votes_raw]
        cleaned.append((sample_id, votes))
    results = []
    for sample_id, votes in cleaned:
        results.append({"sample_id": sample_id, "winner": majority_vote(votes).value})
    return {"results": results}


_POST_ROUTES = {
    "/v1/score": handle_score,
    "/v1/advantage": handle_advantage,
    "/v1/vote": handle_vote,
}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = f"smpkit/{__version__}"

    def log_message(self, fmt, *args):  # default stderr noise replaced by _log_json
        pass

    def _log_json(self, status: int, n_items: int, started: float) -> None:
        line = json.dumps(
            {
                "ts": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "method": self.command,
                "path": self.path,
                "status": status,
                "items": n_items,
                "ms": round((time.monotonic() - started) * 1000.0, 3),
            }
        )
        print(line, flush=True)

    def _send(self, status: int, doc: dict) -> None:
        data = (json.dumps(doc) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_error_doc(self, reject: _Reject) -> None:
        error = {"code": reject.code, "message": reject.message}
        if reject.offending_id is not None:
            error["id"] = reject.offending_id
        self._send(reject.status, {"error": error})

    def do_POST(self) -> None:
        started = time.monotonic()
        n_items = 0
        try:
            if self.path == "/health":
                raise _Reject(405, "bad_request", "health is GET-only")
            handler = _POST_ROUTES.get(self.path)
            if handler is None:
                raise _Reject(404, "bad_request", f"unknown path {self.path!r}")
            length = int(self.headers.get("Content-Length") or 0)
            if length <= 0:
                raise _bad("request body is required")
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise _bad(f"invalid JSON body: {exc.msg}") from None
            if isinstance(body, dict):
                for key in ("items", "groups", "ballots"):
                    if isinstance(body.get(key), list):
                        n_items = len(body[key])
            doc = handler(body, self.server.engine_config)
            self._send(200, doc)
            self._log_json(200, n_items, started)
        except _Reject as reject:
            self._send_error_doc(reject)
            self._log_json(reject.status, n_items, started)
        except EngineError as exc:
            reject = _invalid(str(exc))
            self._send_error_doc(reject)
            self._log_json(reject.status, n_items, started)
        except Exception as exc:  # pragma: no cover - defensive
            reject = _Reject(500, "internal", f"internal error: {exc}")
            self._send_error_doc(reject)
            self._log_json(500, n_items, started)

    def do_GET(self) -> None:
        started = time.monotonic()
        if self.path == "/health":
            config = self.server.engine_config
            self._send(
                200,
                {
                    "status": "ok",
                    "version": __version__,
                    "config_digest": config_digest(config),
                },
            )
            self._log_json(200, 0, started)
        elif self.path in _POST_ROUTES:
            reject = _Reject(405, "bad_request", f"{self.path} is POST-only")
            self._send_error_doc(reject)
            self._log_json(405, 0, started)
        else:
            reject = _Reject(404, "bad_request", f"unknown path {self.path!r}")
            self._send_error_doc(reject)
            self._log_json(404, 0, started)


class ScoringServer(ThreadingHTTPServer):
    """Threaded HTTP server carrying the engine configuration.

    Worker threads are non-daemon and joined on close, so shutdown lets
    in-flight requests finish.
    """

    daemon_threads = False
    block_on_close = True

    def __init__(self, config: ServiceConfig):
        super().__init__((config.host, config.port), _Handler)
        self.engine_config = config


def create_server(config: ServiceConfig) -> ScoringServer:
    return ScoringServer(config)


def run_service(config: ServiceConfig) -> None:
    """Serve until SIGINT/SIGTERM; used by the CLI serve subcommand."""
    httpd = create_server(config)
    host, port = httpd.server_address[0], httpd.server_address[1]
    print(
        json.dumps(
            {
                "event": "listening",
                "host": host,
                "port": port,
                "version": __version__,
                "config_digest": config_digest(config),
            }
        ),
        flush=True,
    )

    def _stop(signum, frame):
        threading.Thread(target=httpd.shutdown).start()

    previous = {}
    for sig in (signal.SIGINT, signal.SIGTERM):
        previous[sig] = signal.signal(sig, _stop)
    try:
        httpd.serve_forever()
    finally:
        for sig, old in previous.items():
            signal.signal(sig, old)
        httpd.server_close()
