"""Chat-completion dispatch with a content-addressed response cache.

Three backends share one interface: :class:`RemoteBackend` posts to an
OpenAI-style ``/chat/completions`` endpoint with retries, :class:`MockBackend`
answers from a table or rules, and :class:`ReplayBackend` answers only from a
cache directory. :class:`ChatClient` puts the cache and a concurrency bound
in front of any backend.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .exceptions import (AuthenticationError, BackendError, CacheMiss, DataError, MalformedResponse,
                         RetriesExhausted)
from .prompts import Message, Role

log = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_TOKENS = 512
DEFAULT_API_KEY_ENV = "HARNESS_API_KEY"


class FinishReason(str, enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    OTHER = "other"

    @classmethod
    def from_wire(cls, value) -> "FinishReason":
        try:
            return cls(value)
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.temperature != 0:
            raise ValueError("harness requests must use temperature 0")
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def canonical(self) -> dict:
        return {
            "model": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": float(self.temperature),
            "max_tokens": int(self.max_output_tokens),
        }

    @classmethod
    def from_canonical(cls, d: dict) -> "ChatRequest":
        return cls(d["model"], tuple(Message(Role(m["role"]), m["content"]) for m in d["messages"]),
                   d["temperature"], d["max_tokens"])


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        object.__setattr__(self, "finish_reason", FinishReason(self.finish_reason))
        if not self.text and self.finish_reason is FinishReason.STOP:
            raise MalformedResponse("empty completion text with finish_reason=stop")

    def to_dict(self) -> dict:
        return {"text": self.text, "finish_reason": self.finish_reason.value,
                "prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(d["text"], FinishReason.from_wire(d.get("finish_reason")),
                   int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))


def _canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def cache_key(request: ChatRequest) -> str:
    """SHA-256 over the canonical JSON of model, messages, temperature and max tokens."""
    return hashlib.sha256(_canonical_bytes(request.canonical())).hexdigest()


# --------------------------------------------------------------------------- cache

@dataclass
class CacheStats:
    entries: int
    bytes: int
    hits: int = 0
    misses: int = 0


class ResponseCache:
    """One JSON file per request key under ``<dir>/<k[:2]>/<k[2:4]>/<key>.json``.

    Each file holds the full request and response. Writes go to a temporary
    file that is then renamed into place, so readers never see partial files.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path_for(self, key: str) -> Path:
        return self.directory / key[:2] / key[2:4] / f"{key}.json"

    def get(self, key: str) -> ChatResponse | None:
        path = self.path_for(key)
        try:
            envelope = json.loads(path.read_text(encoding="utf-8"))
            response = ChatResponse.from_dict(envelope["response"])
        except FileNotFoundError:
            response = None
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            response = None
        with self._lock:
            if response is None:
                self.misses += 1
            else:
                self.hits += 1
        return response

    def put(self, request: ChatRequest, response: ChatResponse) -> str:
        key = cache_key(request)
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"key": key, "request": request.canonical(), "response": response.to_dict()}
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, ensure_ascii=False, indent=1)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return key

    def entry_paths(self) -> list[Path]:
        if not self.directory.exists():
            return []
        return sorted(p for p in self.directory.glob("??/??/*.json") if not p.name.startswith(".tmp-"))

    def stats(self) -> CacheStats:
        paths = self.entry_paths()
        return CacheStats(entries=len(paths), bytes=sum(p.stat().st_size for p in paths),
                          hits=self.hits, misses=self.misses)

    def clear(self) -> int:
        paths = self.entry_paths()
        for p in paths:
            p.unlink()
        return len(paths)


def cache_stats(cache) -> CacheStats:
    """Stats for a :class:`ResponseCache`, or for a directory (session counters then read 0)."""
    if not isinstance(cache, ResponseCache):
        directory = Path(cache)
        if not directory.is_dir():
            raise DataError(f"cache directory {directory} does not exist or is not a directory")
        cache = ResponseCache(directory)
    try:
        return cache.stats()
    except OSError as exc:
        raise DataError(f"cannot read cache directory {cache.directory}: {exc}") from exc


# --------------------------------------------------------------------------- backends

class Backend:
    kind = "abstract"

    def complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


class MockBackend(Backend):
    """Scripted responses, looked up in this order: request-key table, regex
    rules over the last user message, ``responder`` callable, ``default``.
    """

    kind = "mock"

    def __init__(self, table: dict[str, str] | None = None, rules: Sequence[tuple[str, str]] = (),
                 responder: Callable[[ChatRequest], str | None] | None = None, default: str | None = None):
        self.table = dict(table or {})
        self.rules = [(re.compile(p, re.DOTALL), text) for p, text in rules]
        self.responder = responder
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "MockBackend":
        """Load a script: ``{"responses": {key: text}, "rules": [{"pattern", "response"}], "default"}``."""
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(d, dict):
                raise TypeError("top level must be an object")
            rules = [(r["pattern"], r["response"]) for r in d.get("rules", [])]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"cannot load mock script {path}: {exc}") from exc
        return cls(d.get("responses", {}), rules, default=d.get("default"))

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        key = cache_key(request)
        text = self.table.get(key)
        if text is None:
            last_user = next((m.content for m in reversed(request.messages) if m.role is Role.USER), "")
            text = next((t for rx, t in self.rules if rx.search(last_user)), None)
        if text is None and self.responder is not None:
            text = self.responder(request)
        if text is None:
            text = self.default
        if text is None:
            raise BackendError(f"mock backend has no response for request {key}")
        return ChatResponse(text, FinishReason.STOP, 0, len(text.split()))

    def describe(self) -> dict:
        return {"kind": self.kind, "table_entries": len(self.table), "rules": len(self.rules)}


class ReplayBackend(Backend):
    """Serve responses from a cache directory only.

    On a miss, a strict replay raises :class:`CacheMiss`; a non-strict replay
    defers to ``fallback`` when one is given.
    """

    kind = "replay"

    def __init__(self, cache_dir, strict: bool = True, fallback: Backend | None = None):
        self.cache = ResponseCache(cache_dir)
        self.strict = strict
        self.fallback = fallback

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        response = self.cache.get(key)
        if response is not None:
            return response
        if self.strict or self.fallback is None:
            raise CacheMiss(key)
        return self.fallback.complete(request)

    def describe(self) -> dict:
        return {"kind": self.kind, "cache_dir": str(self.cache.directory), "strict": self.strict}


TRANSIENT_STATUS = frozenset({408, 409, 429}) | frozenset(range(500, 600))


class RemoteBackend(Backend):
    """POST ``{model, messages, temperature, max_tokens}`` to a chat-completions URL.

    Transient failures (429, 5xx, timeouts, connection errors) are retried with
    exponential backoff: ``base_delay * factor**(attempt-1)`` seconds, scaled by
    a random factor in ``[1 - jitter, 1 + jitter]``, for at most ``max_attempts``
    attempts in total. The API key is read from the environment variable named
    by ``api_key_env`` at call time and is never logged.
    """

    kind = "remote"

    def __init__(self, endpoint: str, api_key_env: str = DEFAULT_API_KEY_ENV, timeout: float = 60.0,
                 max_attempts: int = 6, base_delay: float = 1.0, factor: float = 2.0, jitter: float = 0.2,
                 sleep: Callable[[float], None] = time.sleep, seed: int | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.factor = factor
        self.jitter = jitter
        self.sleep = sleep
        self.calls = 0
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def _delay(self, attempt: int) -> float:
        with self._lock:
            spread = self._rng.uniform(1 - self.jitter, 1 + self.jitter)
        return self.base_delay * self.factor ** (attempt - 1) * spread

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthenticationError(f"no API key: environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = self._headers()
        body = request.canonical()
        last_error = ""
        for attempt in range(1, self.max_attempts + 1):
            with self._lock:
                self.calls += 1
            try:
                resp = self._http.post(self.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp)
                if resp.status_code in (401, 403):
                    raise AuthenticationError(f"endpoint rejected credentials (HTTP {resp.status_code})")
                if resp.status_code not in TRANSIENT_STATUS:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                last_error = f"HTTP {resp.status_code}"
            if attempt < self.max_attempts:
                delay = self._delay(attempt)
                log.info("transient failure (%s), attempt %d/%d, retrying in %.2fs",
                         last_error, attempt, self.max_attempts, delay)
                self.sleep(delay)
        raise RetriesExhausted(self.max_attempts, last_error)

    @staticmethod
    def _parse(resp: httpx.Response) -> ChatResponse:
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            text = choice["message"]["content"] or ""
            usage = payload.get("usage") or {}
            return ChatResponse(text, FinishReason.from_wire(choice.get("finish_reason")),
                                int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        except MalformedResponse:
            raise
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion payload: {exc!r}") from exc

    def describe(self) -> dict:
        return {"kind": self.kind, "endpoint": self.endpoint, "api_key_env": self.api_key_env}

    def close(self):
        self._http.close()


def complete(backend: Backend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request)


class ChatClient:
    """Cache-first dispatch with at most ``max_concurrency`` backend calls in flight.

    Safe to share between threads. Successful backend responses are written
    to the cache before being returned.
    """

    def __init__(self, backend: Backend, cache: ResponseCache | None = None, max_concurrency: int = 4):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.backend = backend
        self.cache = cache
        self.max_concurrency = max_concurrency
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def __deepcopy__(self, memo):
        # shared resource: cloned estimators keep the same cache and concurrency bound
        return self

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.cache is not None:
            cached = self.cache.get(cache_key(request))
            if cached is not None:
                return cached
        with self._slots:
            response = self.backend.complete(request)
        if self.cache is not None:
            self.cache.put(request, response)
        return response

