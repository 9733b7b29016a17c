from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from schedkit import gateway as gw
from schedkit.gateway import (
    ChatExchange,
    ConstantWrongGateway,
    EchoOracleGateway,
    Gateway,
    GatewayConfig,
    HttpGateway,
    HttpStatusError,
    IdentityGateway,
    MalformedResponseError,
    MissingMockDataError,
    RetriesExhaustedError,
    ScriptedTranscriptGateway,
    StopwordStripperGateway,
    TranscriptExhaustedError,
    TranscriptLog,
    load_transcript,
    register_mock,
    wire_values,
)

ROW_PROMPT = """ROW:
Activity ID: A100
Activity Name: Pour slab
Level: [MASKED]
Area: [MASKED]
Missing columns: Level, Area

STATIC KNOWLEDGE:
none
"""


def test_echo_oracle_answers_ground_truth():
    g = register_mock("EchoOracle", {"A100": {"Level": "SF", "Area": "6E"}})
    exchange = g.complete("sys", ROW_PROMPT)
    assert exchange.response_text == "[Value]SF[/Value],[Value]6E[/Value]"
    assert exchange.error is None


def test_constant_wrong_matches_arity():
    g = register_mock("ConstantWrong")
    exchange = g.complete("sys", ROW_PROMPT)
    assert exchange.response_text == "[Value]__WRONG__[/Value],[Value]__WRONG__[/Value]"


def test_echo_oracle_requires_table():
    with pytest.raises(MissingMockDataError):
        register_mock("EchoOracle", {})


def test_transcript_records_every_call(tmp_path):
    log = TranscriptLog(tmp_path / "t.jsonl")
    g = EchoOracleGateway({"A100": {"Level": "SF", "Area": "6E"}}, transcript=log)
    g.complete("sys", ROW_PROMPT)
    with pytest.raises(MissingMockDataError):
        g.complete("sys", ROW_PROMPT.replace("A100", "A999"))
    records = load_transcript(tmp_path / "t.jsonl")
    assert len(records) == 2
    assert records[0]["error"] is None
    assert records[1]["error"] is not None
    assert records[1]["response_text"] is None
    assert [r["transcript_id"] for r in records] == [0, 1]


def test_scripted_transcript_replays_and_exhausts(tmp_path):
    log = TranscriptLog(tmp_path / "live.jsonl")
    live = EchoOracleGateway({"A100": {"Level": "SF", "Area": "6E"}}, transcript=log)
    responses = [live.complete("sys", ROW_PROMPT).response_text for _ in range(3)]

    replay = register_mock("ScriptedTranscript", tmp_path / "live.jsonl")
    for expected in responses:
        assert replay.complete("sys", ROW_PROMPT).response_text == expected
    with pytest.raises(TranscriptExhaustedError):
        replay.complete("sys", ROW_PROMPT)


def test_scripted_transcript_unknown_prompt():
    g = ScriptedTranscriptGateway(
        [
            {
                "system_text": "s",
                "user_text": "u",
                "response_text": "r",
                "error": None,
            }
        ]
    )
    with pytest.raises(TranscriptExhaustedError):
        g.complete("s", "different prompt")


def test_transcript_hash_tamper_detected(tmp_path):
    log = TranscriptLog(tmp_path / "t.jsonl")
    EchoOracleGateway(
        {"A100": {"Level": "SF", "Area": "6E"}}, transcript=log
    ).complete("sys", ROW_PROMPT)
    text = (tmp_path / "t.jsonl").read_text("utf-8").replace("SF", "RF")
    (tmp_path / "t.jsonl").write_text(text, "utf-8")
    with pytest.raises(gw.GatewayError):
        load_transcript(tmp_path / "t.jsonl")


def test_polish_mocks():
    strip = StopwordStripperGateway()
    out = strip.complete("sys", "RAW OUTPUT:\nthe slab is poured on the deck")
    assert out.response_text == "slab poured deck"
    ident = IdentityGateway()
    assert (
        ident.complete("sys", "RAW OUTPUT:\nthe slab is poured").response_text
        == "the slab is poured"
    )


def test_empty_prompt_rejected():
    with pytest.raises(gw.GatewayError):
        ConstantWrongGateway().complete("sys", "   ")


class SlowCountingGateway(Gateway):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.active = 0
        self.peak = 0
        self._count_lock = threading.Lock()

    def _respond(self, system_text, user_text):
        with self._count_lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.02)
        with self._count_lock:
            self.active -= 1
        return "ok"


def test_bounded_concurrency():
    cfg = GatewayConfig(max_parallel=3)
    g = SlowCountingGateway(cfg=cfg)
    threads = [
        threading.Thread(target=g.complete, args=("s", f"prompt {i}")) for i in range(12)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert g.peak <= 3
    assert len(g.transcript.records) == 12


def test_config_limits():
    with pytest.raises(ValueError):
        GatewayConfig(retry_limit=9)
    with pytest.raises(ValueError):
        GatewayConfig(max_parallel=0)
    with pytest.raises(ValueError):
        GatewayConfig(max_parallel=100)


# --- HTTP gateway against a local stub -----------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    behaviors: list[str] = []
    calls: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls.append(body)
        behavior = type(self).behaviors.pop(0) if type(self).behaviors else "ok"
        if behavior == "ok":
            reply = {
                "choices": [{"message": {"content": "stub says hi"}}],
                "usage": {"prompt_tokens": 3, "completion_tokens": 3},
            }
            payload = json.dumps(reply).encode()
            self.send_response(200)
        elif behavior == "500":
            payload = b"server blew up"
            self.send_response(500)
        elif behavior == "404":
            payload = b"not here"
            self.send_response(404)
        else:  # malformed
            payload = b"{notjson"
            self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.behaviors = []
    _StubHandler.calls = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def _http_cfg(url, retry_limit=2):
    return GatewayConfig(
        endpoint_url=url,
        model_name="stub-model",
        retry_limit=retry_limit,
        timeout_seconds=5.0,
    )


def test_http_success_and_seed_forwarded(stub_server, monkeypatch):
    monkeypatch.setattr(gw, "_BACKOFF_BASE_SECONDS", 0.0)
    g = HttpGateway(_http_cfg(stub_server))
    exchange = g.complete("sys text", "user text")
    assert exchange.response_text == "stub says hi"
    assert exchange.error is None
    assert _StubHandler.calls[0]["seed"] == 12345
    assert _StubHandler.calls[0]["messages"][0]["role"] == "system"


def test_http_retries_transient_then_succeeds(stub_server, monkeypatch):
    monkeypatch.setattr(gw, "_BACKOFF_BASE_SECONDS", 0.0)
    _StubHandler.behaviors = ["500", "500", "ok"]
    g = HttpGateway(_http_cfg(stub_server))
    assert g.complete("s", "u").response_text == "stub says hi"
    assert len(_StubHandler.calls) == 3


def test_http_retries_exhausted(stub_server, monkeypatch):
    monkeypatch.setattr(gw, "_BACKOFF_BASE_SECONDS", 0.0)
    _StubHandler.behaviors = ["500", "500", "500"]
    g = HttpGateway(_http_cfg(stub_server, retry_limit=2))
    with pytest.raises(RetriesExhaustedError):
        g.complete("s", "u")
    assert g.transcript.records[-1]["error"].startswith("RetriesExhaustedError")


def test_http_client_error_no_retry(stub_server, monkeypatch):
    monkeypatch.setattr(gw, "_BACKOFF_BASE_SECONDS", 0.0)
    _StubHandler.behaviors = ["404"]
    g = HttpGateway(_http_cfg(stub_server))
    with pytest.raises(HttpStatusError) as err:
        g.complete("s", "u")
    assert err.value.code == 404
    assert len(_StubHandler.calls) == 1


def test_http_malformed_body(stub_server, monkeypatch):
    monkeypatch.setattr(gw, "_BACKOFF_BASE_SECONDS", 0.0)
    _StubHandler.behaviors = ["garbage"]
    g = HttpGateway(_http_cfg(stub_server))
    with pytest.raises(MalformedResponseError):
        g.complete("s", "u")


def test_wire_values_format():
    assert wire_values(["a", "b"]) == "[Value]a[/Value],[Value]b[/Value]"
