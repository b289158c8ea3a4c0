"""Unit tests for the client against scriptable in-process stubs.

Expected request bodies and response handling are asserted directly from
the wire schema; no test here needs the real service.
"""

import json
import socket
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

import trainer_client.client as client_module
from trainer_client import (
    BASE_URL_ENV_VAR,
    BatchTooLargeError,
    ClientConfig,
    ProtocolError,
    ScoredRollout,
    ScoringClient,
    ServiceError,
    TransportError,
)


def make_client(url, **overrides):
    settings = {"base_url": url, "timeout": 5.0, "max_attempts": 3, "backoff_base": 0.0}
    settings.update(overrides)
    return ScoringClient(ClientConfig(**settings))


def item(id, text="up", truth="up"):
    return {"id": id, "response_text": text, "truth_label": truth}


def error_body(code, message, offending=None):
    envelope = {"code": code, "message": message}
    if offending is not None:
        envelope["id"] = offending
    return {"error": envelope}


def free_port():
    """A port that nothing is listening on."""
    probe = socket.create_server(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


# -- configuration -----------------------------------------------------------


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ClientConfig(timeout=0.0)
    with pytest.raises(ValueError):
        ClientConfig(timeout=-1.0)
    with pytest.raises(ValueError):
        ClientConfig(max_attempts=0)
    with pytest.raises(ValueError):
        ClientConfig(backoff_base=-0.1)
    with pytest.raises(ValueError):
        ClientConfig(batch_cap=0)
    with pytest.raises(ValueError):
        ClientConfig(base_url="")


def test_config_defaults():
    config = ClientConfig()
    assert config.base_url == "http://127.0.0.1:8787"
    assert config.timeout == 10.0
    assert config.max_attempts == 3
    assert config.batch_cap == 4096


def test_base_url_env_override(monkeypatch):
    monkeypatch.setenv(BASE_URL_ENV_VAR, "http://10.1.2.3:9999")
    assert ClientConfig().base_url == "http://10.1.2.3:9999"
    # An explicit argument beats the environment.
    assert ClientConfig(base_url="http://other:1").base_url == "http://other:1"
    monkeypatch.delenv(BASE_URL_ENV_VAR)
    assert ClientConfig().base_url == "http://127.0.0.1:8787"


# -- request construction ----------------------------------------------------


def test_score_request_wire_shape(stub):
    client = make_client(stub.url)
    rollouts = [item("a#0", "first", "up"), item("a#1", "other", "down")]
    scored = client.score_batch(rollouts, weights={"alpha": 2.0})
    method, path, raw = stub.requests[0]
    assert (method, path) == ("POST", "/v1/score")
    assert json.loads(raw) == {
        "items": [
            {"id": "a#0", "response_text": "first", "truth_label": "up"},
            {"id": "a#1", "response_text": "other", "truth_label": "down"},
        ],
        "weights": {"alpha": 2.0},
    }
    assert scored == [
        ScoredRollout(id="a#0", format=1, accuracy=1, consistency=1, total=5.0),
        ScoredRollout(id="a#1", format=1, accuracy=1, consistency=1, total=5.0),
    ]
    assert all(r.advantage is None for r in scored)


def test_score_request_omits_weights_when_not_given(stub):
    make_client(stub.url).score_batch([item("x")])
    assert set(stub.bodies()[0].keys()) == {"items"}


def test_identical_calls_build_identical_request_bytes(stub):
    client = make_client(stub.url)
    rollouts = [item("a", "text one"), item("b", "text two")]
    client.score_batch(rollouts, weights={"beta": 3.0})
    client.score_batch(rollouts, weights={"beta": 3.0})
    assert stub.requests[0][2] == stub.requests[1][2]


def test_score_batch_rejects_malformed_rollouts(stub):
    client = make_client(stub.url)
    with pytest.raises(ValueError, match="missing"):
        client.score_batch([{"id": "a", "response_text": "t"}])
    with pytest.raises(ValueError, match="unexpected"):
        client.score_batch([dict(item("a"), sample_id="a")])
    with pytest.raises(ValueError, match="non-empty"):
        client.score_batch([item("")])
    with pytest.raises(TypeError):
        client.score_batch(["not a mapping"])
    assert stub.requests == []


def test_advantage_request_wire_shape(stub):
    client = make_client(stub.url)
    vectors = client.advantages_for_groups(
        [("g1", [1.0, 0.0, 1.0, 0.0]), ("g2", [2.5, 2.5])],
        config={"epsilon": 0.3},
    )
    assert json.loads(stub.requests[0][2]) == {
        "groups": [
            {"group_id": "g1", "rewards": [1.0, 0.0, 1.0, 0.0]},
            {"group_id": "g2", "rewards": [2.5, 2.5]},
        ],
        "config": {"epsilon": 0.3},
    }
    assert vectors == [[0.0, 1.0, 2.0, 3.0], [1.0, 2.0]]


def test_advantage_rejects_malformed_groups(stub):
    client = make_client(stub.url)
    with pytest.raises(ValueError, match="non-empty"):
        client.advantages_for_groups([("", [1.0, 2.0])])
    with pytest.raises(TypeError, match="sequence"):
        client.advantages_for_groups([("g", "rewards")])
    with pytest.raises(TypeError, match="pair"):
        client.advantages_for_groups([42])
    assert stub.requests == []


def test_batch_cap_enforced_before_any_traffic(stub):
    client = make_client(stub.url, batch_cap=4)
    with pytest.raises(BatchTooLargeError) as exc_info:
        client.score_batch([item(f"r{i}") for i in range(5)])
    assert exc_info.value.size == 5
    assert exc_info.value.cap == 4
    with pytest.raises(BatchTooLargeError):
        client.advantages_for_groups([(f"g{i}", [1.0, 2.0]) for i in range(5)])
    assert stub.requests == []


# -- retry policy ------------------------------------------------------------


def test_single_503_then_success(stub):
    stub.script.append((503, error_body("internal", "transient")))
    retries = []
    client = make_client(stub.url, on_retry=lambda attempt, reason: retries.append((attempt, reason)))
    scored = client.score_batch([item("a", "hello")])
    assert [r.total for r in scored] == [5.0]
    assert len(stub.requests) == 2
    assert [attempt for attempt, _ in retries] == [1]
    assert retries[0][1].code == 503


def test_4xx_surfaced_immediately_without_retry(stub):
    message = "item 'bad' truth_label must be one of up, down, hold"
    stub.script.append((422, error_body("validation_failed", message, "bad")))
    retries = []
    client = make_client(stub.url, on_retry=lambda *args: retries.append(args))
    with pytest.raises(ServiceError) as exc_info:
        client.score_batch([item("bad", truth="up")])
    error = exc_info.value
    assert error.status == 422
    assert error.code == "validation_failed"
    assert error.service_message == message
    assert error.offending_id == "bad"
    assert len(stub.requests) == 1
    assert retries == []


def test_400_not_retried(stub):
    stub.script.append((400, error_body("bad_request", "body is not a JSON object")))
    with pytest.raises(ServiceError) as exc_info:
        make_client(stub.url).score_batch([item("a")])
    assert exc_info.value.status == 400
    assert len(stub.requests) == 1


def test_exhausted_5xx_carries_last_status(stub):
    stub.script.extend([(503, error_body("overloaded", "busy"))] * 3)
    retries = []
    client = make_client(stub.url, max_attempts=3, on_retry=lambda a, r: retries.append(a))
    with pytest.raises(TransportError) as exc_info:
        client.score_batch([item("a")])
    error = exc_info.value
    assert error.status == 503
    assert error.attempts == 3
    assert len(stub.requests) == 3
    assert retries == [1, 2]


def test_connection_refused_retries_then_transport_error():
    port = free_port()
    retries = []
    client = make_client(
        f"http://127.0.0.1:{port}", max_attempts=2, on_retry=lambda a, r: retries.append(r)
    )
    with pytest.raises(TransportError) as exc_info:
        client.score_batch([item("a")])
    assert exc_info.value.status is None
    assert exc_info.value.attempts == 2
    assert len(retries) == 1
    assert isinstance(retries[0], OSError)


def test_backoff_doubles_from_base(stub, monkeypatch):
    sleeps = []
    monkeypatch.setattr(client_module.time, "sleep", sleeps.append)
    stub.script.extend([(500, error_body("internal", "boom"))] * 4)
    client = make_client(stub.url, max_attempts=4, backoff_base=0.25)
    with pytest.raises(TransportError):
        client.score_batch([item("a")])
    assert sleeps == [0.25, 0.5, 1.0]


def test_zero_backoff_never_sleeps(stub, monkeypatch):
    sleeps = []
    monkeypatch.setattr(client_module.time, "sleep", sleeps.append)
    stub.script.extend([(500, error_body("internal", "boom"))] * 2)
    with pytest.raises(TransportError):
        make_client(stub.url, max_attempts=2, backoff_base=0.0).score_batch([item("a")])
    assert sleeps == []


def test_single_attempt_config_never_retries(stub):
    stub.script.append((503, error_body("internal", "boom")))
    with pytest.raises(TransportError) as exc_info:
        make_client(stub.url, max_attempts=1).score_batch([item("a")])
    assert exc_info.value.attempts == 1
    assert len(stub.requests) == 1


# -- response validation -----------------------------------------------------


def test_non_json_success_body_is_protocol_error_without_retry(stub):
    stub.script.append((200, b"not json"))
    with pytest.raises(ProtocolError):
        make_client(stub.url).score_batch([item("a")])
    assert len(stub.requests) == 1


@pytest.mark.parametrize(
    "body",
    [
        {"nope": []},
        {"results": "not a list"},
        {"results": []},
        {"results": [{"id": "a", "format": 1, "accuracy": 1, "consistency": 1}]},
        {"results": [{"id": "a", "format": 1, "accuracy": 1, "consistency": 1, "total": "x"}]},
        {"results": [{"id": "a", "format": True, "accuracy": 1, "consistency": 1, "total": 1.0}]},
        {"results": [{"id": "other", "format": 1, "accuracy": 1, "consistency": 1, "total": 1.0}]},
    ],
)
def test_malformed_score_response_is_protocol_error(stub, body):
    stub.script.append((200, body))
    with pytest.raises(ProtocolError):
        make_client(stub.url).score_batch([item("a")])


def test_out_of_order_score_results_rejected(stub):
    stub.script.append(
        (
            200,
            {
                "results": [
                    {"id": "b", "format": 1, "accuracy": 1, "consistency": 1, "total": 1.0},
                    {"id": "a", "format": 1, "accuracy": 1, "consistency": 1, "total": 1.0},
                ]
            },
        )
    )
    with pytest.raises(ProtocolError, match="out of order"):
        make_client(stub.url).score_batch([item("a"), item("b")])


@pytest.mark.parametrize(
    "body",
    [
        {"results": [{"group_id": "other", "advantages": [0.0, 0.0]}]},
        {"results": [{"group_id": "g", "advantages": [0.0]}]},
        {"results": [{"group_id": "g", "advantages": [0.0, "x"]}]},
        {"results": [{"group_id": "g", "advantages": [0.0, 0.0]}, {"group_id": "h", "advantages": []}]},
    ],
)
def test_malformed_advantage_response_is_protocol_error(stub, body):
    stub.script.append((200, body))
    with pytest.raises(ProtocolError):
        make_client(stub.url).advantages_for_groups([("g", [1.0, 2.0])])


def test_error_status_with_broken_envelope_is_protocol_error(stub):
    stub.script.append((422, b"not json"))
    with pytest.raises(ProtocolError):
        make_client(stub.url).score_batch([item("a")])
    stub.script.append((422, {"error": {"code": 5, "message": "x"}}))
    with pytest.raises(ProtocolError):
        make_client(stub.url).score_batch([item("a")])


# -- grouped scoring and concurrency -----------------------------------------


def test_score_rollout_groups_joins_advantages(stub):
    score_results = {
        "results": [
            {"id": "p1#0", "format": 1, "accuracy": 1, "consistency": 1, "total": 4.0},
            {"id": "p1#1", "format": 1, "accuracy": 0, "consistency": 0, "total": 1.0},
            {"id": "p2#0", "format": 0, "accuracy": 0, "consistency": 0, "total": 0.0},
            {"id": "p2#1", "format": 1, "accuracy": 1, "consistency": 1, "total": 4.0},
        ]
    }
    advantage_results = {
        "results": [
            {"group_id": "p1", "advantages": [1.0, -1.0]},
            {"group_id": "p2", "advantages": [-1.0, 1.0]},
        ]
    }
    stub.script.extend([(200, score_results), (200, advantage_results)])
    client = make_client(stub.url)
    joined = client.score_rollout_groups(
        [
            ("p1", [item("p1#0"), item("p1#1")]),
            ("p2", [item("p2#0"), item("p2#1")]),
        ],
        config={"std_guard": 1e-8},
    )
    assert [group_id for group_id, _ in joined] == ["p1", "p2"]
    assert [[r.advantage for r in members] for _, members in joined] == [[1.0, -1.0], [-1.0, 1.0]]
    assert joined[0][1][0].total == 4.0
    # The rewards forwarded to the advantage call are the service's own
    # totals, passed through untouched.
    advantage_request = stub.bodies()[1]
    assert advantage_request == {
        "groups": [
            {"group_id": "p1", "rewards": [4.0, 1.0]},
            {"group_id": "p2", "rewards": [0.0, 4.0]},
        ],
        "config": {"std_guard": 1e-8},
    }


def test_score_batches_preserves_batch_order(stub):
    client = make_client(stub.url)
    batches = [[item(f"b{n}#{i}", text="x" * (n + 1)) for i in range(2)] for n in range(6)]
    results = client.score_batches(batches, max_workers=3)
    assert [[r.id for r in batch] for batch in results] == [[f"b{n}#0", f"b{n}#1"] for n in range(6)]
    assert [batch[0].total for batch in results] == [float(n + 1) for n in range(6)]


def test_shared_instance_is_thread_safe(stub):
    client = make_client(stub.url)

    def call(n):
        return client.score_batch([item(f"t{n}", text="y" * n)])[0]

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(call, range(1, 33)))
    assert [r.id for r in results] == [f"t{n}" for n in range(1, 33)]
    assert [r.total for r in results] == [float(n) for n in range(1, 33)]


def test_health_document(stub):
    doc = make_client(stub.url).health()
    assert doc["status"] == "ok"
    assert stub.requests[0][:2] == ("GET", "/health")


def test_health_failure_is_transport_error():
    with pytest.raises(TransportError):
        make_client(f"http://127.0.0.1:{free_port()}").health()
