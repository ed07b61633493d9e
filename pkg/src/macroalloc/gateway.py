"""Provider-agnostic chat-completion gateway with record/replay cassettes.

Requests hash on their canonical JSON serialization, so two requests with
the same messages/model/temperature hash equal no matter how they were
built. Replay mode never touches the network; a missing hash is a hard
cassette-miss error rather than a silent live call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import CassetteMissError, ExtractionError, GatewayError, TransportError

log = logging.getLogger(__name__)

CASSETTE_HEADER = {"format": "llm-cassette", "version": 1}

# Long-form calls (ranking reflections, FOMC summaries) need more room
# than sentiment extraction or decision parsing.
DEFAULT_MAX_TOKENS = 1024
LONG_FORM_MAX_TOKENS = 4096

_ROLES = ("system", "user")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request with a canonical serialization."""

    messages: tuple[tuple[str, str], ...]
    model_id: str
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_TOKENS
    request_tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise GatewayError("chat request needs at least one message")
        for role, _ in self.messages:
            if role not in _ROLES:
                raise GatewayError(f"unsupported message role {role!r}")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise GatewayError("max_output_tokens must be positive")

    def canonical_json(self) -> str:
        payload = {
            "max_output_tokens": self.max_output_tokens,
            "messages": [{"role": r, "text": t} for r, t in self.messages],
            "model_id": self.model_id,
            "request_tag": self.request_tag,
            "temperature": self.temperature,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: int = 0

    def __post_init__(self):
        if self.latency_ms < 0:
            raise GatewayError("latency_ms must be non-negative")


class Cassette:
    """Append-only map of request hash -> recorded response."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, ChatResponse] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if line_no == 1 and record.get("format") == "llm-cassette":
                    continue
                resp = record["response"]
                self._entries[record["hash"]] = ChatResponse(
                    text=resp["text"],
                    input_tokens=resp.get("input_tokens", 0),
                    output_tokens=resp.get("output_tokens", 0),
                    latency_ms=resp.get("latency_ms", 0),
                )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def lookup(self, digest: str) -> ChatResponse | None:
        return self._entries.get(digest)

    def put(self, request: ChatRequest, response: ChatResponse) -> None:
        digest = request.digest()
        with self._lock:
            known = digest in self._entries
            self._entries[digest] = response
            if self.path is None or known:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            need_header = not self.path.exists() or self.path.stat().st_size == 0
            with open(self.path, "a") as fh:
                if need_header:
                    fh.write(json.dumps(CASSETTE_HEADER, sort_keys=True) + "\n")
                fh.write(
                    json.dumps(
                        {
                            "hash": digest,
                            "request": json.loads(request.canonical_json()),
                            "response": {
                                "text": response.text,
                                "input_tokens": response.input_tokens,
                                "output_tokens": response.output_tokens,
                                "latency_ms": response.latency_ms,
                            },
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


class ChatGateway:
    """Chat-completion boundary in one of three modes: live, record, replay.

    Live calls speak the OpenAI-compatible wire format and retry up to
    ``max_retries`` times (<= max_retries + 1 total attempts) with
    exponential backoff; jitter can be disabled for deterministic tests.
    """

    def __init__(
        self,
        mode: str = "replay",
        cassette: Cassette | None = None,
        endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        jitter: bool = True,
        max_inflight: int = 4,
        transport: httpx.BaseTransport | None = None,
        rng: random.Random | None = None,
    ):
        if mode not in ("live", "record", "replay"):
            raise GatewayError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and cassette is None:
            raise GatewayError(f"{mode} mode requires a cassette")
        if mode in ("live", "record") and not endpoint:
            raise GatewayError(f"{mode} mode requires an endpoint")
        self.mode = mode
        self.cassette = cassette
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.jitter = jitter
        self._rng = rng or random.Random()
        self._semaphore = threading.BoundedSemaphore(max_inflight)
        self._transport = transport
        self.calls = 0
        self._calls_lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._calls_lock:
            self.calls += 1
        if self.mode == "replay":
            response = self.cassette.lookup(request.digest())
            if response is None:
                raise CassetteMissError(
                    f"no cassette entry for request {request.digest()[:12]} "
                    f"(tag={request.request_tag!r})"
                )
            return response
        response = self._complete_live(request)
        if self.mode == "record":
            self.cassette.put(request, response)
        return response

    def _complete_live(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model_id,
            "messages": [
                {"role": role, "content": text} for role, text in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        with self._semaphore:
            with httpx.Client(
                timeout=self.timeout, transport=self._transport
            ) as client:
                for attempt in range(self.max_retries + 1):
                    if attempt:
                        delay = self.backoff_base * (2 ** (attempt - 1))
                        if self.jitter:
                            delay *= 0.5 + self._rng.random()
                        time.sleep(delay)
                    try:
                        reply = client.post(
                            self.endpoint, json=payload, headers=headers
                        )
                    except httpx.HTTPError as exc:
                        last_error = exc
                        log.warning("gateway attempt %d failed: %s", attempt + 1, exc)
                        continue
                    if reply.status_code == 429 or reply.status_code >= 500:
                        last_error = GatewayError(
                            f"HTTP {reply.status_code} from gateway"
                        )
                        log.warning(
                            "gateway attempt %d got HTTP %d",
                            attempt + 1,
                            reply.status_code,
                        )
                        continue
                    if reply.status_code != 200:
                        raise TransportError(
                            f"gateway returned HTTP {reply.status_code}: "
                            f"{reply.text[:200]}"
                        )
                    return self._parse_reply(reply)
        raise TransportError(
            f"gateway unreachable after {self.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse_reply(reply: httpx.Response) -> ChatResponse:
        try:
            body = reply.json()
            text = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            text=text if text is not None else "",
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=int(reply.elapsed.total_seconds() * 1000)
            if reply.elapsed is not None
            else 0,
        )


def _scan_balanced(text: str) -> str | None:
    """First balanced top-level JSON object or array, string-aware."""
    for open_ch, close_ch in (("{", "}"), ("[", "]")):
        start = text.find(open_ch)
        while start != -1:
            depth = 0
            in_string = False
            escaped = False
            for i in range(start, len(text)):
                ch = text[i]
                if in_string:
                    if escaped:
                        escaped = False
                    elif ch == "\\":
                        escaped = True
                    elif ch == '"':
                        in_string = False
                    continue
                if ch == '"':
                    in_string = True
                elif ch == open_ch:
                    depth += 1
                elif ch == close_ch:
                    depth -= 1
                    if depth == 0:
                        candidate = text[start : i + 1]
                        try:
                            json.loads(candidate)
                        except json.JSONDecodeError:
                            break
                        return candidate
            start = text.find(open_ch, start + 1)
    return None


def strip_fences(text: str) -> str:
    """Drop markdown code fences (``` or ```json) around a payload."""
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    lines = stripped.splitlines()
    if lines and lines[0].startswith("```"):
        lines = lines[1:]
    if lines and lines[-1].strip() == "```":
        lines = lines[:-1]
    return "\n".join(lines)


def extract_json(text: str):
    """Parse model output as JSON: as-is, then fence-stripped, then the
    first balanced top-level object/array found in the text."""
    for candidate in (text, strip_fences(text)):
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, TypeError):
            pass
    balanced = _scan_balanced(text or "")
    if balanced is not None:
        return json.loads(balanced)
    raise ExtractionError("no parseable JSON in model output", raw_text=text or "")
