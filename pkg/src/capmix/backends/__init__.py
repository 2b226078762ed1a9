from .batching import BatchScheduler, batch_submit
from .config import BackendConfig, all_mock, build_clients, load_backend_configs
from .core import (
    Backend,
    ChatClient,
    ChatRequest,
    ChatResponse,
    CountingClock,
    ExchangeLog,
    RetryPolicy,
    load_transcript,
    request_digest,
)
from .http import HttpBackend, build_payload, encode_image_ref, extract_reply
from .mocks import DigestBackend, EchoBackend, SequenceBackend, TranscriptBackend, mock_backend

__all__ = [
    "Backend",
    "BackendConfig",
    "BatchScheduler",
    "ChatClient",
    "ChatRequest",
    "ChatResponse",
    "CountingClock",
    "DigestBackend",
    "EchoBackend",
    "ExchangeLog",
    "HttpBackend",
    "RetryPolicy",
    "SequenceBackend",
    "TranscriptBackend",
    "all_mock",
    "batch_submit",
    "build_clients",
    "build_payload",
    "encode_image_ref",
    "extract_reply",
    "load_backend_configs",
    "load_transcript",
    "mock_backend",
    "request_digest",
]
