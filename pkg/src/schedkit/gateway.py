"""Chat-completion access plus deterministic mock gateways.

This is the only nondeterministic boundary in the package. Every call,
successful or not, appends exactly one record to the transcript log, so a
saved transcript can replay a run bit-for-bit without network access. A
counting semaphore caps in-flight requests at ``max_parallel``.

The oracle mocks answer masked-row prompts; they locate the row id and the
masked column list via the labels below, which the masked-row renderer
shares.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

ROW_ID_LABEL = "Activity ID"
MISSING_COLUMNS_LABEL = "Missing columns"

_ROW_ID_RE = re.compile(rf"^{ROW_ID_LABEL}:\s*(.+)$", re.MULTILINE)
_MISSING_RE = re.compile(rf"^{MISSING_COLUMNS_LABEL}:\s*(.+)$", re.MULTILINE)

_BACKOFF_BASE_SECONDS = 0.5

STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the "
    "this to was were will with".split()
)


class GatewayError(Exception):
    pass


class GatewayTimeoutError(GatewayError):
    pass


class HttpStatusError(GatewayError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code


class MalformedResponseError(GatewayError):
    pass


class RetriesExhaustedError(GatewayError):
    pass


class MissingMockDataError(GatewayError):
    pass


class TranscriptExhaustedError(GatewayError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str = ""
    model_name: str = ""
    temperature: float = 0.0
    request_seed: int = 12345
    max_parallel: int = 1
    timeout_seconds: float = 60.0
    retry_limit: int = 3
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if not 0 <= self.retry_limit <= 5:
            raise ValueError("retry_limit must be in [0, 5]")
        if not 1 <= self.max_parallel <= 64:
            raise ValueError("max_parallel must be in [1, 64]")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatExchange:
    system_text: str
    user_text: str
    response_text: str | None
    latency_ms: float
    prompt_tokens: int
    completion_tokens: int
    transcript_id: int
    error: str | None = None


def exchange_hash(system_text: str, user_text: str) -> str:
    return hashlib.sha256(
        system_text.encode("utf-8") + b"\x00" + user_text.encode("utf-8")
    ).hexdigest()


def _content_hash(record: dict) -> str:
    basis = json.dumps(
        {
            "system_text": record["system_text"],
            "user_text": record["user_text"],
            "response_text": record["response_text"],
            "error": record["error"],
        },
        sort_keys=True,
    )
    return hashlib.sha256(basis.encode("utf-8")).hexdigest()


class TranscriptLog:
    """Append-only exchange log with a single serialized writer."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self._next_id = 0

    def append(self, **fields) -> dict:
        with self._lock:
            record = dict(fields)
            record["transcript_id"] = self._next_id
            self._next_id += 1
            record["content_hash"] = _content_hash(record)
            self.records.append(record)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            return record


def load_transcript(path: Path) -> list[dict]:
    records = []
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        if _content_hash(record) != record.get("content_hash"):
            raise GatewayError(f"{path}:{line_no}: transcript content hash mismatch")
        records.append(record)
    return records


class Gateway:
    """Base class: concurrency gating, transcript recording, error capture."""

    deterministic_latency = True

    def __init__(
        self,
        cfg: GatewayConfig | None = None,
        transcript: TranscriptLog | None = None,
    ):
        self.cfg = cfg or GatewayConfig()
        self.transcript = transcript or TranscriptLog()
        self._slots = threading.BoundedSemaphore(self.cfg.max_parallel)

    def _respond(self, system_text: str, user_text: str) -> str:
        raise NotImplementedError

    def complete(self, system_text: str, user_text: str) -> ChatExchange:
        if not user_text.strip():
            raise GatewayError("prompt is empty")
        with self._slots:
            started = time.monotonic()
            error: GatewayError | None = None
            response: str | None = None
            try:
                response = self._respond(system_text, user_text)
            except GatewayError as exc:
                error = exc
            latency = (
                0.0
                if self.deterministic_latency
                else (time.monotonic() - started) * 1000.0
            )
        record = self.transcript.append(
            system_text=system_text,
            user_text=user_text,
            response_text=response,
            error=None if error is None else f"{type(error).__name__}: {error}",
            latency_ms=latency,
            prompt_tokens=len(system_text.split()) + len(user_text.split()),
            completion_tokens=len(response.split()) if response else 0,
        )
        if error is not None:
            raise error
        return ChatExchange(
            system_text=system_text,
            user_text=user_text,
            response_text=response,
            latency_ms=latency,
            prompt_tokens=record["prompt_tokens"],
            completion_tokens=record["completion_tokens"],
            transcript_id=record["transcript_id"],
        )


def _parse_row_id(user_text: str) -> str:
    m = _ROW_ID_RE.search(user_text)
    if not m:
        raise MalformedResponseError("prompt carries no row id line")
    return m.group(1).strip()


def _parse_missing_columns(user_text: str) -> list[str]:
    m = _MISSING_RE.search(user_text)
    if not m:
        raise MalformedResponseError("prompt carries no missing-columns line")
    return [c.strip() for c in m.group(1).split(",") if c.strip()]


def wire_values(values: list[str]) -> str:
    return ",".join(f"[Value]{v}[/Value]" for v in values)


class EchoOracleGateway(Gateway):
    """Answers every masked-row prompt from a lookup table.

    With the table built from ground truth this is the calibration oracle;
    planting wrong entries yields any target accuracy.
    """

    def __init__(self, answer_table: dict[str, dict[str, str]], **kw):
        if not answer_table:
            raise MissingMockDataError("EchoOracle needs an answer table")
        super().__init__(**kw)
        self.answer_table = answer_table

    def _respond(self, system_text: str, user_text: str) -> str:
        row_id = _parse_row_id(user_text)
        columns = _parse_missing_columns(user_text)
        row = self.answer_table.get(row_id)
        if row is None:
            raise MissingMockDataError(f"no answers for row {row_id!r}")
        return wire_values([row.get(col, "") for col in columns])


class ConstantWrongGateway(Gateway):
    """Returns the sentinel wrong value at the demanded arity."""

    def _respond(self, system_text: str, user_text: str) -> str:
        arity = len(_parse_missing_columns(user_text))
        return wire_values(["__WRONG__"] * arity)


class ScriptedTranscriptGateway(Gateway):
    """Replays a saved transcript; responses match prompts by content.

    Each saved record is consumed once. A call whose prompt has no
    remaining record raises TranscriptExhaustedError.
    """

    def __init__(self, records: list[dict], **kw):
        super().__init__(**kw)
        self._pending: dict[str, list[dict]] = {}
        for rec in records:
            key = exchange_hash(rec["system_text"], rec["user_text"])
            self._pending.setdefault(key, []).append(rec)

    def _respond(self, system_text: str, user_text: str) -> str:
        key = exchange_hash(system_text, user_text)
        queue = self._pending.get(key)
        if not queue:
            raise TranscriptExhaustedError("no scripted response left for this prompt")
        rec = queue.pop(0)
        if rec["response_text"] is None:
            raise GatewayError(rec["error"] or "scripted error")
        return rec["response_text"]


def _polish_payload(user_text: str) -> str:
    marker = "RAW OUTPUT:\n"
    pos = user_text.find(marker)
    if pos < 0:
        return user_text
    return user_text[pos + len(marker) :]


class StopwordStripperGateway(Gateway):
    """Polishing mock: drops stopword tokens from the payload."""

    def _respond(self, system_text: str, user_text: str) -> str:
        payload = _polish_payload(user_text)
        kept = [tok for tok in payload.split() if tok.lower() not in STOPWORDS]
        return " ".join(kept)


class IdentityGateway(Gateway):
    """Polishing mock: returns the payload unchanged."""

    def _respond(self, system_text: str, user_text: str) -> str:
        return _polish_payload(user_text)


class HttpGateway(Gateway):
    """OpenAI-compatible chat-completions client with bounded retries.

    Transient failures (connection errors, timeouts, 429, 5xx) back off
    exponentially up to ``retry_limit`` retries; other HTTP statuses fail
    immediately. The request seed is forwarded; servers that ignore it
    still see it recorded in the transcript via the prompt hash.
    """

    deterministic_latency = False

    def __init__(self, cfg: GatewayConfig, transcript: TranscriptLog | None = None):
        if not cfg.endpoint_url:
            raise GatewayError("endpoint_url not configured")
        super().__init__(cfg, transcript)

    def _api_key(self) -> str | None:
        import os

        return os.environ.get(self.cfg.api_key_env)

    def _respond(self, system_text: str, user_text: str) -> str:
        import requests

        payload = {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": self.cfg.temperature,
            "seed": self.cfg.request_seed,
        }
        headers = {"Content-Type": "application/json"}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_error: GatewayError | None = None
        for attempt in range(self.cfg.retry_limit + 1):
            if attempt:
                time.sleep(_BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
            try:
                resp = requests.post(
                    self.cfg.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=self.cfg.timeout_seconds,
                )
            except requests.Timeout:
                last_error = GatewayTimeoutError(
                    f"no response within {self.cfg.timeout_seconds}s"
                )
                continue
            except requests.RequestException as exc:
                last_error = GatewayError(f"transport failure: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = HttpStatusError(resp.status_code, resp.text)
                continue
            if resp.status_code != 200:
                raise HttpStatusError(resp.status_code, resp.text)
            try:
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponseError(f"unexpected response shape: {exc}")
        raise RetriesExhaustedError(
            f"gave up after {self.cfg.retry_limit + 1} attempts: {last_error}"
        )


MOCK_KINDS = ("EchoOracle", "ConstantWrong", "ScriptedTranscript")


def register_mock(
    kind: str,
    data=None,
    *,
    cfg: GatewayConfig | None = None,
    transcript: TranscriptLog | None = None,
) -> Gateway:
    """Build a mock gateway satisfying the complete() contract."""
    if kind == "EchoOracle":
        if not data:
            raise MissingMockDataError("EchoOracle requires a ground-truth table")
        return EchoOracleGateway(data, cfg=cfg, transcript=transcript)
    if kind == "ConstantWrong":
        return ConstantWrongGateway(cfg=cfg, transcript=transcript)
    if kind == "ScriptedTranscript":
        if data is None:
            raise MissingMockDataError("ScriptedTranscript requires records or a path")
        records = load_transcript(data) if isinstance(data, (str, Path)) else data
        return ScriptedTranscriptGateway(records, cfg=cfg, transcript=transcript)
    if kind == "StopwordStripper":
        return StopwordStripperGateway(cfg=cfg, transcript=transcript)
    if kind == "Identity":
        return IdentityGateway(cfg=cfg, transcript=transcript)
    raise MissingMockDataError(f"unknown mock kind {kind!r}")
