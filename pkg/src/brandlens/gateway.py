"""Provider-neutral LLM client with retry, rate limiting and record/replay."""
from __future__ import annotations

import base64
import enum
import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "BRANDLENS_API_KEY_{}"


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "total": self.total}

    @classmethod
    def from_dict(cls, data: Mapping) -> TokenUsage:
        return cls(int(data["input_tokens"]), int(data["output_tokens"]))


class ErrorKind(str, enum.Enum):
    SAFETY_FILTER = "safety_filter"
    RATE_LIMITED = "rate_limited"
    SERVER_ERROR = "server_error"
    INPUT_TOO_LARGE = "input_too_large"
    TRANSPORT = "transport"
    MALFORMED = "malformed"


RETRYABLE = {ErrorKind.RATE_LIMITED, ErrorKind.SERVER_ERROR, ErrorKind.TRANSPORT}


class GatewayError(Exception):
    def __init__(self, kind: ErrorKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = ErrorKind(kind)
        self.detail = detail

    @property
    def retryable(self) -> bool:
        return self.kind in RETRYABLE

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail, "retryable": self.retryable}

    @classmethod
    def from_dict(cls, data: Mapping) -> GatewayError:
        return cls(ErrorKind(data["kind"]), str(data.get("detail", "")))

    def __eq__(self, other):
        return isinstance(other, GatewayError) and (self.kind, self.detail) == (other.kind, other.detail)

    def __hash__(self):
        return hash((self.kind, self.detail))


class FixtureError(Exception):
    pass


class FixtureMiss(FixtureError):
    def __init__(self, request_hash: str):
        super().__init__(f"no fixture for request {request_hash}")
        self.request_hash = request_hash


class FixtureCorrupt(FixtureError):
    pass


class UnknownModelFormula(KeyError):
    pass


@dataclass(frozen=True)
class ImageData:
    data: bytes = field(repr=False)
    media_type: str = "image/png"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    system_text: str
    user_text: str
    image: ImageData | None = None
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def provider(self) -> str:
        return self.model_id.split("/", 1)[0] if "/" in self.model_id else ""

    @property
    def model_name(self) -> str:
        return self.model_id.split("/", 1)[-1]

    def canonical(self) -> str:
        body = {
            "model_id": self.model_id,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "image": None if self.image is None else {"sha256": self.image.sha256, "media_type": self.image.media_type},
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        }
        return json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    def request_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


# --- error classification ---------------------------------------------------

SAFETY_MARKERS: dict[str, tuple[str, ...]] = {
    "*": ("blocked", "safety", "content_filter", "content_policy", "harm_category"),
    "openai": ("content_policy_violation", "flagged by our safety system"),
    "anthropic": ("refusal",),
    "google": ("blockreason", "prohibited_content"),
}

TOO_LARGE_MARKERS: dict[str, tuple[str, ...]] = {
    "*": (
        "too large",
        "too long",
        "request_too_large",
        "context_length_exceeded",
        "maximum context length",
        "exceeds the maximum",
    ),
}


def _markers(table: Mapping[str, Sequence[str]], provider: str | None) -> list[str]:
    found = list(table.get("*", ()))
    if provider:
        found += table.get(provider, ())
    return [m.lower() for m in found]


def classify_error(
    provider_payload: str,
    http_status: int,
    provider: str | None = None,
    safety_markers: Mapping[str, Sequence[str]] = SAFETY_MARKERS,
    too_large_markers: Mapping[str, Sequence[str]] = TOO_LARGE_MARKERS,
) -> GatewayError:
    payload = provider_payload or ""
    detail = f"http {http_status}: {payload[:500]}"
    if http_status == 429:
        return GatewayError(ErrorKind.RATE_LIMITED, detail)
    if 500 <= http_status <= 599:
        return GatewayError(ErrorKind.SERVER_ERROR, detail)
    if http_status == 413:
        return GatewayError(ErrorKind.INPUT_TOO_LARGE, detail)
    lowered = payload.lower()
    if any(m in lowered for m in _markers(safety_markers, provider)):
        return GatewayError(ErrorKind.SAFETY_FILTER, detail)
    if any(m in lowered for m in _markers(too_large_markers, provider)):
        return GatewayError(ErrorKind.INPUT_TOO_LARGE, detail)
    try:
        json.loads(payload)
    except ValueError:
        return GatewayError(ErrorKind.MALFORMED, "unparseable payload; " + detail)
    return GatewayError(ErrorKind.MALFORMED, "unexpected response; " + detail)


# --- image token estimates ----------------------------------------------------


@dataclass(frozen=True)
class ImageTokenFormula:
    """``base + per_tile * tiles`` where the image is covered by square tiles."""

    base: int
    per_tile: int
    tile: int

    def estimate(self, width: int, height: int) -> int:
        if width < 1 or height < 1:
            raise ValueError("image dimensions must be positive")
        tiles = math.ceil(width / self.tile) * math.ceil(height / self.tile)
        return self.base + self.per_tile * tiles


def estimate_image_tokens(
    width: int, height: int, model_id: str, formulas: Mapping[str, ImageTokenFormula]
) -> int:
    try:
        formula = formulas[model_id]
    except KeyError:
        raise UnknownModelFormula(model_id) from None
    return formula.estimate(width, height)


# --- rate limiting ------------------------------------------------------------


class RateLimiter:
    """At most ``rate`` dispatches in any one-second window."""

    def __init__(self, rate: int, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate < 1:
            raise ValueError("rate must be >= 1")
        self.rate = rate
        self.clock = clock
        self.sleep = sleep
        self._sent: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = self.clock()
                # compare differences so expiry and the wait agree under rounding
                while self._sent and now - self._sent[0] >= 1.0:
                    self._sent.popleft()
                if len(self._sent) < self.rate:
                    self._sent.append(now)
                    return now
                self.sleep(max(1.0 - (now - self._sent[0]), 1e-6))


# --- transports -----------------------------------------------------------------


class Transport(Protocol):
    def send(self, request: LlmRequest) -> tuple[str, TokenUsage]: ...


def _fixture_line(request_hash: str, model_id: str, text: str, usage: TokenUsage, error: GatewayError | None) -> str:
    record = {
        "hash": request_hash,
        "model": model_id,
        "text": text,
        "usage": {"input": usage.input_tokens, "output": usage.output_tokens},
    }
    if error is not None:
        record["error"] = error.to_dict()
    return json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"


@dataclass(frozen=True)
class FixtureRecord:
    text: str
    usage: TokenUsage
    error: GatewayError | None = None


def load_fixtures(path: str | Path) -> dict[str, list[FixtureRecord]]:
    """Read a fixture JSONL file into hash -> records (in file order)."""
    records: dict[str, list[FixtureRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                digest = raw["hash"]
                text = raw["text"]
                usage = TokenUsage(int(raw["usage"]["input"]), int(raw["usage"]["output"]))
                error = GatewayError.from_dict(raw["error"]) if raw.get("error") else None
                if not isinstance(digest, str) or not isinstance(text, str):
                    raise TypeError("hash and text must be strings")
            except (ValueError, KeyError, TypeError) as exc:
                raise FixtureCorrupt(f"{path}:{lineno}: {type(exc).__name__}: {exc}") from None
            records.setdefault(digest, []).append(FixtureRecord(text, usage, error))
    return records


class ReplayTransport:
    """Serves recorded responses by request hash.

    When a hash was recorded several times (e.g. failures followed by a
    success) the records are served in order and the last one repeats.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records = load_fixtures(self.path)
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self.served: list[str] = []

    def send(self, request: LlmRequest) -> tuple[str, TokenUsage]:
        digest = request.request_hash()
        with self._lock:
            entries = self.records.get(digest)
            if not entries:
                raise FixtureMiss(digest)
            i = self._cursor.get(digest, 0)
            self._cursor[digest] = i + 1
            self.served.append(digest)
            record = entries[min(i, len(entries) - 1)]
        if record.error is not None:
            raise record.error
        return record.text, record.usage


class RecordingTransport:
    """Wraps another transport and appends every outcome to a fixture file."""

    def __init__(self, inner: Transport, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        self.recorded = 0

    def _append(self, line: str) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
            self.recorded += 1

    def send(self, request: LlmRequest) -> tuple[str, TokenUsage]:
        digest = request.request_hash()
        try:
            text, usage = self.inner.send(request)
        except GatewayError as exc:
            self._append(_fixture_line(digest, request.model_id, "", TokenUsage(), exc))
            raise
        self._append(_fixture_line(digest, request.model_id, text, usage, None))
        return text, usage


# --- live providers -------------------------------------------------------------

DEFAULT_ENDPOINTS = {
    "openai": "https://api.openai.com/v1/chat/completions",
    "anthropic": "https://api.anthropic.com/v1/messages",
    "google": "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent",
}


def credential_env(provider: str) -> str:
    return API_KEY_ENV.format(provider.upper())


def missing_credentials(model_ids: Sequence[str]) -> list[str]:
    names = sorted({credential_env(m.split("/", 1)[0]) for m in model_ids})
    return [n for n in names if not os.environ.get(n)]


class HttpProviderTransport:
    """Talks to OpenAI-, Anthropic- or Gemini-style HTTP endpoints.

    ``model_id`` must be ``<provider>/<model>``. Keys come from
    ``BRANDLENS_API_KEY_<PROVIDER>``.
    """

    def __init__(
        self,
        endpoints: Mapping[str, str] | None = None,
        client: httpx.Client | None = None,
        timeout: float = 120.0,
        env: Mapping[str, str] | None = None,
    ):
        self.endpoints = {**DEFAULT_ENDPOINTS, **(endpoints or {})}
        self.client = client or httpx.Client(timeout=timeout)
        self.env = os.environ if env is None else env

    def _key(self, provider: str) -> str:
        name = credential_env(provider)
        key = self.env.get(name)
        if not key:
            raise GatewayError(ErrorKind.TRANSPORT, f"missing credentials: set {name}")
        return key

    def send(self, request: LlmRequest) -> tuple[str, TokenUsage]:
        provider = request.provider
        builder = getattr(self, f"_build_{provider}", None)
        if builder is None:
            raise ValueError(f"unsupported provider in model id {request.model_id!r}")
        url, headers, body = builder(request, self._key(provider))
        try:
            resp = self.client.post(url, headers=headers, json=body)
        except httpx.HTTPError as exc:
            raise GatewayError(ErrorKind.TRANSPORT, f"{type(exc).__name__}: {exc}") from None
        if resp.status_code != 200:
            raise classify_error(resp.text, resp.status_code, provider)
        try:
            payload = resp.json()
        except ValueError:
            raise classify_error(resp.text, resp.status_code, provider) from None
        return getattr(self, f"_read_{provider}")(payload, resp.text)

    @staticmethod
    def _b64(image: ImageData) -> str:
        return base64.b64encode(image.data).decode("ascii")

    def _build_openai(self, req: LlmRequest, key: str):
        content: list[dict] = [{"type": "text", "text": req.user_text}]
        if req.image is not None:
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:{req.image.media_type};base64,{self._b64(req.image)}"}}
            )
        body = {
            "model": req.model_name,
            "messages": [{"role": "system", "content": req.system_text}, {"role": "user", "content": content}],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        return self.endpoints["openai"], {"Authorization": f"Bearer {key}"}, body

    def _read_openai(self, payload: dict, raw: str):
        try:
            choice = payload["choices"][0]
            if choice.get("finish_reason") == "content_filter":
                raise GatewayError(ErrorKind.SAFETY_FILTER, raw[:500])
            text = choice["message"]["content"] or ""
            usage = TokenUsage(payload["usage"]["prompt_tokens"], payload["usage"]["completion_tokens"])
        except (KeyError, IndexError, TypeError):
            raise classify_error(raw, 200, "openai") from None
        return text, usage

    def _build_anthropic(self, req: LlmRequest, key: str):
        content: list[dict] = []
        if req.image is not None:
            content.append(
                {"type": "image", "source": {"type": "base64", "media_type": req.image.media_type, "data": self._b64(req.image)}}
            )
        content.append({"type": "text", "text": req.user_text})
        body = {
            "model": req.model_name,
            "system": req.system_text,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        headers = {"x-api-key": key, "anthropic-version": "2023-06-01"}
        return self.endpoints["anthropic"], headers, body

    def _read_anthropic(self, payload: dict, raw: str):
        try:
            if payload.get("stop_reason") == "refusal":
                raise GatewayError(ErrorKind.SAFETY_FILTER, raw[:500])
            text = "".join(block.get("text", "") for block in payload["content"] if block.get("type") == "text")
            usage = TokenUsage(payload["usage"]["input_tokens"], payload["usage"]["output_tokens"])
        except (KeyError, TypeError):
            raise classify_error(raw, 200, "anthropic") from None
        return text, usage

    def _build_google(self, req: LlmRequest, key: str):
        parts: list[dict] = [{"text": req.user_text}]
        if req.image is not None:
            parts.append({"inline_data": {"mime_type": req.image.media_type, "data": self._b64(req.image)}})
        body = {
            "system_instruction": {"parts": [{"text": req.system_text}]},
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"maxOutputTokens": req.max_output_tokens, "temperature": req.temperature},
        }
        url = self.endpoints["google"].format(model=req.model_name)
        return url, {"x-goog-api-key": key}, body

    def _read_google(self, payload: dict, raw: str):
        try:
            if payload.get("promptFeedback", {}).get("blockReason"):
                raise GatewayError(ErrorKind.SAFETY_FILTER, raw[:500])
            candidate = payload["candidates"][0]
            if candidate.get("finishReason") in ("SAFETY", "PROHIBITED_CONTENT", "BLOCKLIST", "SPII"):
                raise GatewayError(ErrorKind.SAFETY_FILTER, raw[:500])
            text = "".join(p.get("text", "") for p in candidate["content"]["parts"])
            meta = payload["usageMetadata"]
            usage = TokenUsage(meta.get("promptTokenCount", 0), meta.get("candidatesTokenCount", 0))
        except (KeyError, IndexError, TypeError):
            raise classify_error(raw, 200, "google") from None
        return text, usage


# --- gateway ----------------------------------------------------------------------


class Gateway:
    """Retrying front end over a transport.

    Retryable failures back off exponentially with full jitter
    (``uniform(0, base * factor**attempt)``) for up to ``max_attempts``
    tries. Safety blocks and oversize inputs surface at once unless
    ``retry_safety_once`` allows a single second try for safety blocks.
    """

    def __init__(
        self,
        transport: Transport,
        rate_limiter: RateLimiter | None = None,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        factor: float = 2.0,
        retry_safety_once: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.transport = transport
        self.rate_limiter = rate_limiter
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.factor = factor
        self.retry_safety_once = retry_safety_once
        self.sleep = sleep
        self.rng = rng or random.Random()
        self._lock = threading.Lock()
        self.attempts = 0
        self.usage_log: list[tuple[str, TokenUsage]] = []

    @property
    def total_usage(self) -> TokenUsage:
        with self._lock:
            return sum((u for _, u in self.usage_log), TokenUsage())

    def _dispatch(self, request: LlmRequest) -> tuple[str, TokenUsage]:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        with self._lock:
            self.attempts += 1
        return self.transport.send(request)

    def complete(self, request: LlmRequest) -> tuple[str, TokenUsage]:
        safety_retried = False
        attempt = 0
        while True:
            try:
                text, usage = self._dispatch(request)
            except GatewayError as exc:
                if exc.kind is ErrorKind.SAFETY_FILTER and self.retry_safety_once and not safety_retried:
                    safety_retried = True
                    continue
                if not exc.retryable or attempt + 1 >= self.max_attempts:
                    raise
                delay = self.rng.uniform(0, self.base_delay * self.factor**attempt)
                log.info("retrying %s after %s (%.2fs)", request.model_id, exc.kind.value, delay)
                self.sleep(delay)
                attempt += 1
                continue
            with self._lock:
                self.usage_log.append((request.request_hash(), usage))
            return text, usage
