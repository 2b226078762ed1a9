"""Chat-completion backend substrate.

A Backend turns one ChatRequest into reply text (or raises). ChatClient
adds the operational contract on top: bounded in-flight parallelism,
retry with exponential backoff, and an append-only JSONL exchange log
keyed by request digest so any run can be replayed byte-for-byte through
the scripted backend.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from ..errors import AuthMissingError, BackendError, BackendUnavailableError, FixtureMissError


@dataclass(frozen=True)
class ChatRequest:
    """One prompt for one backend: text parts plus images or one video."""

    backend_name: str
    prompt_parts: tuple[str, ...]
    images: tuple[str, ...] = ()
    video: Optional[str] = None
    max_reply_tokens: int = 1024
    temperature: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "prompt_parts", tuple(self.prompt_parts))
        object.__setattr__(self, "images", tuple(self.images))
        if not self.prompt_parts:
            raise ValueError("prompt_parts must be non-empty")
        if self.video is not None and self.images:
            raise ValueError("attachments are either images or one video, not both")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be within [0, 1]")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency: float
    attempt_count: int
    backend_name: str


def request_digest(request: ChatRequest) -> str:
    """Stable short hash of the full request (keys the exchange log)."""
    canonical = json.dumps(
        {
            "backend": request.backend_name,
            "parts": list(request.prompt_parts),
            "images": list(request.images),
            "video": request.video,
            "max_reply_tokens": request.max_reply_tokens,
            "temperature": request.temperature,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class Backend:
    """Minimal backend interface: send one request, return reply text."""

    name = "backend"

    def send(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def send_batch(self, requests: list[ChatRequest]) -> list:
        """Per-item results: reply text or the exception raised for that item."""
        results = []
        for request in requests:
            try:
                results.append(self.send(request))
            except Exception as exc:  # isolation: one failure never poisons the batch
                results.append(exc)
        return results


class ExchangeLog:
    """Append-only JSONL record of every request/response exchange."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, entry: dict) -> None:
        line = json.dumps(entry, sort_keys=True, separators=(",", ":"))
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(line + "\n")


def load_transcript(path) -> dict[str, str]:
    """digest -> reply text from an exchange log (last success wins)."""
    transcript = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry.get("reply") is not None:
                transcript[entry["digest"]] = entry["reply"]
    return transcript


@dataclass(frozen=True)
class RetryPolicy:
    base_delay: float = 1.0
    multiplier: float = 2.0
    jitter: float = 0.2

    def delay(self, attempt: int, rng: random.Random) -> float:
        raw = self.base_delay * self.multiplier ** (attempt - 1)
        return raw * (1.0 + self.jitter * rng.uniform(-1.0, 1.0))


class CountingClock:
    """Deterministic stand-in for a monotonic clock (mock-backend runs)."""

    def __init__(self, step: float = 0.001):
        self.step = step
        self._now = 0.0
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self._now += self.step
            return self._now


class ChatClient:
    """Backend wrapper enforcing the retry, logging, and in-flight contracts."""

    def __init__(
        self,
        backend: Backend,
        config,
        log: Optional[ExchangeLog] = None,
        policy: RetryPolicy = RetryPolicy(),
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.backend = backend
        self.config = config
        self.log = log if log is not None else ExchangeLog()
        self.policy = policy
        self.clock = clock
        self.sleep = sleep
        self.rng = rng if rng is not None else random.Random()
        self._slots = threading.BoundedSemaphore(getattr(config, "max_inflight", 4))

    @property
    def name(self) -> str:
        return self.config.name

    def _log_exchange(self, request, digest, reply, error, latency, attempt):
        self.log.append(
            {
                "digest": digest,
                "backend": self.config.name,
                "request": {
                    "parts": list(request.prompt_parts),
                    "images": list(request.images),
                    "video": request.video,
                    "max_reply_tokens": request.max_reply_tokens,
                    "temperature": request.temperature,
                },
                "reply": reply,
                "error": error,
                "latency": round(latency, 6),
                "attempt": attempt,
            }
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        """Send with retries; every attempt is logged.

        Raises AuthMissingError / FixtureMissError immediately (retrying
        cannot help) and BackendUnavailableError once retries are spent.
        """
        digest = request_digest(request)
        max_attempts = self.config.max_retries + 1
        last_exc = None
        for attempt in range(1, max_attempts + 1):
            start = self.clock()
            try:
                with self._slots:
                    text = self.backend.send(request)
                latency = self.clock() - start
                if not text:
                    raise BackendError("empty reply")
            except (AuthMissingError, FixtureMissError) as exc:
                self._log_exchange(request, digest, None, str(exc), self.clock() - start, attempt)
                raise
            except Exception as exc:
                self._log_exchange(request, digest, None, str(exc), self.clock() - start, attempt)
                last_exc = exc
                if attempt < max_attempts:
                    self.sleep(self.policy.delay(attempt, self.rng))
                continue
            self._log_exchange(request, digest, text, None, latency, attempt)
            return ChatResponse(
                text=text, latency=latency, attempt_count=attempt, backend_name=self.config.name
            )
        raise BackendUnavailableError(
            f"backend {self.config.name!r} unavailable after {max_attempts} attempts: {last_exc}",
            attempts=max_attempts,
            cause=last_exc,
        )
