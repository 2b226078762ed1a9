import http.server
import json
import os
import threading
import time

import pytest

from capmix.backends.batching import BatchScheduler, batch_submit
from capmix.backends.config import BackendConfig, all_mock, build_clients, load_backend_configs
from capmix.backends.core import (
    Backend,
    ChatClient,
    ChatRequest,
    CountingClock,
    ExchangeLog,
    RetryPolicy,
    load_transcript,
    request_digest,
)
from capmix.backends.http import HttpBackend, build_payload, extract_reply
from capmix.backends.mocks import (
    DigestBackend,
    EchoBackend,
    JudgeMockBackend,
    SequenceBackend,
    TranscriptBackend,
    mock_backend,
)
from capmix.errors import (
    AuthMissingError,
    BackendError,
    BackendUnavailableError,
    FixtureMissError,
)

FAST = RetryPolicy(base_delay=0.001, multiplier=2.0, jitter=0.0)


def make_client(backend, log=None, max_retries=2, **config_kw):
    config = BackendConfig(
        name="test", kind="text", provider="echo", max_retries=max_retries, **config_kw
    )
    return ChatClient(backend, config, log=log, policy=FAST)


def req(*parts, **kw):
    return ChatRequest(backend_name="test", prompt_parts=parts, **kw)


def test_chat_request_invariants():
    with pytest.raises(ValueError):
        ChatRequest(backend_name="b", prompt_parts=())
    with pytest.raises(ValueError):
        ChatRequest(backend_name="b", prompt_parts=("x",), images=("i.png",), video="v.mp4")
    with pytest.raises(ValueError):
        ChatRequest(backend_name="b", prompt_parts=("x",), temperature=1.5)


def test_request_digest_stable_and_sensitive():
    a = req("hello", temperature=0.2)
    b = req("hello", temperature=0.2)
    c = req("hello!", temperature=0.2)
    assert request_digest(a) == request_digest(b)
    assert request_digest(a) != request_digest(c)


def test_echo_returns_final_part():
    response = make_client(EchoBackend()).complete(req("a", "b"))
    assert response.text == "b"
    assert response.attempt_count == 1


def test_digest_mock_is_deterministic():
    client = make_client(DigestBackend())
    first = client.complete(req("hello"))
    second = client.complete(req("hello"))
    assert first.text == second.text
    assert first.text.startswith("reply-")


def test_fail_twice_then_succeed_counts_attempts():
    backend = SequenceBackend([BackendError("x"), BackendError("y"), "fine"])
    response = make_client(backend, max_retries=3).complete(req("go"))
    assert response.text == "fine"
    assert response.attempt_count == 3


def test_always_fail_exhausts_retries():
    backend = SequenceBackend([BackendError("x")] * 10)
    client = make_client(backend, max_retries=2)
    with pytest.raises(BackendUnavailableError) as info:
        client.complete(req("go"))
    assert info.value.attempts == 3


def test_empty_reply_is_retried_as_malformed():
    backend = SequenceBackend(["", "ok"])
    response = make_client(backend).complete(req("go"))
    assert response.text == "ok"
    assert response.attempt_count == 2


def test_scripted_transcript_and_fixture_miss(tmp_path):
    log = ExchangeLog(tmp_path / "log.jsonl")
    client = make_client(DigestBackend(), log=log)
    request = req("alpha")
    recorded = client.complete(request)

    transcript = load_transcript(tmp_path / "log.jsonl")
    replayer = make_client(TranscriptBackend(transcript))
    assert replayer.complete(request).text == recorded.text
    with pytest.raises(FixtureMissError):
        replayer.complete(req("never-recorded"))


def test_exchange_log_records_every_attempt(tmp_path):
    log = ExchangeLog(tmp_path / "log.jsonl")
    backend = SequenceBackend([BackendError("boom"), "ok"])
    make_client(backend, log=log).complete(req("x"))
    lines = [json.loads(l) for l in open(tmp_path / "log.jsonl")]
    assert len(lines) == 2
    assert lines[0]["error"] == "boom" and lines[0]["reply"] is None
    assert lines[1]["reply"] == "ok" and lines[1]["attempt"] == 2
    assert lines[0]["digest"] == lines[1]["digest"]


def test_judge_mock_emits_parseable_scores():
    from capmix.capscore import parse_judge_response

    prompt = (
        "Can you give a score (two decimal places) from 0 to 1 for captions 1 and 2, ...\n\n"
        "Caption 1: a dog runs\nCaption 2: a cat sits\n\nGround truth caption: a dog"
    )
    reply = JudgeMockBackend().send(req(prompt))
    sims, quals = parse_judge_response(reply, 2, 1.0)
    assert len(sims) == 2 and len(quals) == 2
    # position-independent: swapping candidates swaps scores
    swapped = prompt.replace("Caption 1: a dog runs", "Caption 1: a cat sits").replace(
        "Caption 2: a cat sits", "Caption 2: a dog runs"
    )
    sims2, _ = parse_judge_response(JudgeMockBackend().send(req(swapped)), 2, 1.0)
    assert sims2 == [sims[1], sims[0]]


def test_mock_backend_factory():
    assert isinstance(mock_backend("echo"), EchoBackend)
    assert isinstance(mock_backend("digest"), DigestBackend)
    assert isinstance(mock_backend("scripted", transcript={}), TranscriptBackend)
    assert isinstance(mock_backend("sequence", script=[]), SequenceBackend)
    assert isinstance(mock_backend("judge"), JudgeMockBackend)
    with pytest.raises(ValueError):
        mock_backend("nope")


# --- batching ---------------------------------------------------------------


def test_flush_pattern_10_requests_capacity_4():
    client = make_client(EchoBackend(), batch_capacity=4, batch_linger_ms=200)
    with BatchScheduler(client) as scheduler:
        futures = [scheduler.submit(req(f"r{i}")) for i in range(10)]
    assert [f.result().text for f in futures] == [f"r{i}" for i in range(10)]
    assert scheduler.flush_sizes == [4, 4, 2]


def test_capacity_1_is_strictly_sequential():
    client = make_client(EchoBackend(), batch_capacity=1)
    with BatchScheduler(client) as scheduler:
        [scheduler.submit(req(f"r{i}")) for i in range(10)]
    assert scheduler.flush_sizes == [1] * 10


def test_partial_batch_flushes_after_linger():
    client = make_client(EchoBackend(), batch_capacity=8, batch_linger_ms=50)
    scheduler = BatchScheduler(client)
    try:
        futures = [scheduler.submit(req("a")), scheduler.submit(req("b"))]
        done = [f.result(timeout=2.0) for f in futures]  # resolves without close()
        assert [r.text for r in done] == ["a", "b"]
        assert scheduler.flush_sizes == [2]
    finally:
        scheduler.close()


def test_batch_submit_order_and_content_match_sequential():
    requests = [req(f"item-{i}") for i in range(9)]
    batched_client = make_client(DigestBackend(), batch_capacity=4)
    results = batch_submit(requests, batched_client)
    sequential = [make_client(DigestBackend()).complete(r) for r in requests]
    assert [r.text for r in results] == [r.text for r in sequential]


def test_batch_isolates_per_request_failures():
    class FailsOnMagic(Backend):
        def send(self, request):
            if "magic" in request.prompt_parts[-1]:
                raise BackendError("poisoned")
            return request.prompt_parts[-1]

    client = make_client(FailsOnMagic(), batch_capacity=4, max_retries=1)
    requests = [req("a"), req("magic"), req("c")]
    results = batch_submit(requests, client)
    assert results[0].text == "a"
    assert isinstance(results[1], BackendUnavailableError)
    assert results[2].text == "c"


def test_batch_submit_rejects_mixed_backends():
    client = make_client(EchoBackend())
    mixed = [req("a"), ChatRequest(backend_name="other", prompt_parts=("b",))]
    with pytest.raises(ValueError):
        batch_submit(mixed, client)


class SlowBatchBackend(Backend):
    """Fixed latency per batch, regardless of batch size."""

    def __init__(self, per_batch=0.2):
        self.per_batch = per_batch

    def send(self, request):
        time.sleep(self.per_batch)
        return "ok"

    def send_batch(self, requests):
        time.sleep(self.per_batch)
        return ["ok"] * len(requests)


def test_batching_speedup_matches_capacity():
    requests = [req(f"r{i}") for i in range(16)]

    start = time.perf_counter()
    batch_submit(requests, make_client(SlowBatchBackend(), batch_capacity=4, batch_linger_ms=40))
    batched = time.perf_counter() - start

    start = time.perf_counter()
    batch_submit(requests, make_client(SlowBatchBackend(), batch_capacity=1))
    sequential = time.perf_counter() - start

    assert sequential / batched >= 3.6


# --- config and wire format --------------------------------------------------


def test_backend_config_validation():
    with pytest.raises(Exception):
        BackendConfig(name="x", kind="sound")
    with pytest.raises(Exception):
        BackendConfig(name="x", kind="text", provider="http", endpoint="")
    with pytest.raises(Exception):
        BackendConfig(name="x", kind="text", provider="echo", batch_capacity=0)


def test_load_backend_configs_toml_and_json(tmp_path):
    toml_path = tmp_path / "backends.toml"
    toml_path.write_text(
        '[backends.cap]\nkind = "image"\nprovider = "digest"\n'
        '[backends.judge]\nkind = "text"\nprovider = "judge"\ntemperature = 0.0\n'
    )
    configs = load_backend_configs(toml_path)
    assert set(configs) == {"cap", "judge"}
    assert configs["judge"].temperature == 0.0
    assert all_mock(configs)

    json_path = tmp_path / "backends.json"
    json_path.write_text(json.dumps({"backends": {"h": {"kind": "text", "endpoint": "http://x"}}}))
    configs = load_backend_configs(json_path)
    assert configs["h"].provider == "http"
    assert not all_mock(configs)

    clients = build_clients(load_backend_configs(toml_path))
    assert isinstance(clients["cap"].clock, CountingClock)


def test_build_payload_wire_shape(tmp_path):
    image = tmp_path / "frame.png"
    image.write_bytes(b"\x89PNG fake")
    request = ChatRequest(
        backend_name="model-x",
        prompt_parts=("look", "closely"),
        images=(str(image),),
        max_reply_tokens=77,
        temperature=0.3,
    )
    payload = build_payload(request, "model-x")
    assert payload["model"] == "model-x"
    assert payload["max_tokens"] == 77
    assert payload["temperature"] == 0.3
    content = payload["messages"][0]["content"]
    assert content[0] == {"type": "text", "text": "look"}
    assert content[1] == {"type": "text", "text": "closely"}
    assert content[2]["type"] == "image_url"
    assert content[2]["image_url"]["url"].startswith("data:image/png;base64,")

    video_request = ChatRequest(backend_name="m", prompt_parts=("p",), video="clip.mp4")
    video_payload = build_payload(video_request, "m")
    assert video_payload["messages"][0]["content"][1] == {
        "type": "video_url",
        "video_url": {"url": "clip.mp4"},
    }


def test_extract_reply_rejects_malformed():
    assert extract_reply({"choices": [{"message": {"content": "hi"}}]}) == "hi"
    with pytest.raises(BackendError):
        extract_reply({"choices": []})
    with pytest.raises(BackendError):
        extract_reply({})


class _Handler(http.server.BaseHTTPRequestHandler):
    fail_first = 2
    seen_auth = []

    def do_POST(self):
        cls = type(self)
        cls.seen_auth.append(self.headers.get("Authorization"))
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        reply = {"choices": [{"message": {"content": body["messages"][0]["content"][0]["text"].upper()}}]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def local_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.fail_first = 2
    _Handler.seen_auth = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_backend_retries_then_succeeds(local_server, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "sekrit")
    config = BackendConfig(
        name="local", kind="text", provider="http", endpoint=local_server,
        auth_env="TEST_TOKEN", max_retries=2, timeout=5.0,
    )
    client = ChatClient(HttpBackend(config), config, policy=FAST)
    response = client.complete(ChatRequest(backend_name="local", prompt_parts=("hello",)))
    assert response.text == "HELLO"
    assert response.attempt_count == 3  # two 500s then success
    assert _Handler.seen_auth[-1] == "Bearer sekrit"


def test_http_backend_auth_missing(local_server, monkeypatch):
    monkeypatch.delenv("NOPE_TOKEN", raising=False)
    config = BackendConfig(
        name="local", kind="text", provider="http", endpoint=local_server,
        auth_env="NOPE_TOKEN",
    )
    client = ChatClient(HttpBackend(config), config, policy=FAST)
    with pytest.raises(AuthMissingError):
        client.complete(ChatRequest(backend_name="local", prompt_parts=("x",)))
