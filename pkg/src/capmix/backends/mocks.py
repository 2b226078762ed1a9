"""Deterministic backend doubles for desk-scale runs and tests.

echo     – replies with the final prompt part
digest   – replies with a short string hashed from the full request
scripted – replays a recorded transcript keyed by request digest
sequence – replays an ordered script of replies/exceptions (stateful)
judge    – emits well-formed score lines hashed from the candidate texts
"""

from __future__ import annotations

import hashlib
import re
import threading

from ..errors import BackendError, FixtureMissError
from .core import Backend, ChatRequest, request_digest


class EchoBackend(Backend):
    name = "echo"

    def send(self, request: ChatRequest) -> str:
        return request.prompt_parts[-1]


class DigestBackend(Backend):
    name = "digest"

    def send(self, request: ChatRequest) -> str:
        return f"reply-{request_digest(request)[:12]}"


class TranscriptBackend(Backend):
    """Replay a prior run: request digest -> recorded reply."""

    name = "scripted"

    def __init__(self, transcript: dict[str, str]):
        self.transcript = dict(transcript)

    def send(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        try:
            return self.transcript[digest]
        except KeyError:
            raise FixtureMissError(f"no transcript entry for digest {digest}") from None


class SequenceBackend(Backend):
    """Ordered script; each item is a reply string or an exception to raise."""

    name = "sequence"

    def __init__(self, script):
        self.script = list(script)
        self._idx = 0
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> str:
        with self._lock:
            if self._idx >= len(self.script):
                raise FixtureMissError("sequence script exhausted")
            item = self.script[self._idx]
            self._idx += 1
        if isinstance(item, BaseException):
            raise item
        return item


class JudgeMockBackend(Backend):
    """Deterministic judge double emitting valid two-metric score lines.

    Scores are hashed from each candidate's caption text (independent of
    candidate position and of the requested scale), quantized to a dyadic
    grid so scaled replies are exact multiples of the unscaled ones.
    """

    name = "judge"

    _SCALE = re.compile(r"from 0 to (\d+) for ")
    _CAPTION = re.compile(r"^Caption (\d+): (.*)$", re.MULTILINE)

    def send(self, request: ChatRequest) -> str:
        prompt = "\n".join(request.prompt_parts)
        scale_match = self._SCALE.search(prompt)
        captions = self._CAPTION.findall(prompt)
        if scale_match is None or not captions:
            raise BackendError("judge mock got a non-judge prompt")
        scale = int(scale_match.group(1))
        sims, quals = [], []
        for _, text in captions:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            sims.append(scale * (digest[0] % 65) / 64.0)
            quals.append(scale * (digest[1] % 65) / 64.0)
        return (
            ",".join(repr(v) for v in sims) + ";" + ",".join(repr(v) for v in quals)
        )


def mock_backend(mode: str, **kwargs) -> Backend:
    """Factory for the mock family; scripted needs transcript=, sequence needs script=."""
    if mode == "echo":
        return EchoBackend()
    if mode == "digest":
        return DigestBackend()
    if mode == "scripted":
        return TranscriptBackend(kwargs["transcript"])
    if mode == "sequence":
        return SequenceBackend(kwargs["script"])
    if mode == "judge":
        return JudgeMockBackend()
    raise ValueError(f"unknown mock mode {mode!r}")
