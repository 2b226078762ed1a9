"""Backend configuration: TOML or JSON file -> named ChatClients.

Auth tokens live only in environment variables named by `auth_env`;
the config file never carries secrets.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..errors import SchemaError
from .core import ChatClient, CountingClock, ExchangeLog, load_transcript
from .http import HttpBackend
from .mocks import mock_backend

_KINDS = ("image", "video", "text")
_MOCK_PROVIDERS = ("echo", "digest", "scripted", "judge")


@dataclass(frozen=True)
class BackendConfig:
    name: str
    kind: str                     # image | video | text
    provider: str = "http"        # http | echo | digest | scripted
    endpoint: str = ""
    auth_env: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    batch_capacity: int = 1
    batch_linger_ms: int = 50
    max_inflight: int = 4
    temperature: float = 0.2      # default request temperature for this backend
    transcript_path: str = ""     # scripted provider only

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaError(f"backend {self.name!r}: kind must be one of {_KINDS}")
        if self.provider not in ("http",) + _MOCK_PROVIDERS:
            raise SchemaError(f"backend {self.name!r}: unknown provider {self.provider!r}")
        if self.timeout <= 0:
            raise SchemaError(f"backend {self.name!r}: timeout must be positive")
        if self.batch_capacity < 1:
            raise SchemaError(f"backend {self.name!r}: batch_capacity must be >= 1")
        if self.provider == "http" and not self.endpoint:
            raise SchemaError(f"backend {self.name!r}: http provider needs an endpoint")


def load_backend_configs(path) -> dict[str, BackendConfig]:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        with open(path) as fh:
            data = json.load(fh)
    entries = data.get("backends")
    if not isinstance(entries, dict) or not entries:
        raise SchemaError(f"{path}: expected a non-empty 'backends' table")
    configs = {}
    for name, raw in entries.items():
        try:
            configs[name] = BackendConfig(name=name, **raw)
        except TypeError as exc:
            raise SchemaError(f"{path}: backend {name!r}: {exc}") from exc
    return configs


def all_mock(configs: dict[str, BackendConfig]) -> bool:
    return all(c.provider in _MOCK_PROVIDERS for c in configs.values())


def build_clients(
    configs: dict[str, BackendConfig],
    log: ExchangeLog | None = None,
    clock=None,
    rng_seed: int | None = None,
) -> dict[str, ChatClient]:
    """Instantiate one ChatClient per configured backend.

    All clients share one exchange log. When every backend is a mock and
    no clock is given, a deterministic counting clock is used so logged
    latencies (and therefore whole runs) are byte-reproducible.
    """
    log = log if log is not None else ExchangeLog()
    if clock is None and all_mock(configs):
        clock = CountingClock()
    clients = {}
    for name, config in configs.items():
        if config.provider == "http":
            backend = HttpBackend(config)
        elif config.provider == "scripted":
            if not config.transcript_path:
                raise SchemaError(f"backend {name!r}: scripted provider needs transcript_path")
            backend = mock_backend("scripted", transcript=load_transcript(config.transcript_path))
        else:
            backend = mock_backend(config.provider)
        kwargs = {"log": log}
        if clock is not None:
            kwargs["clock"] = clock
        if rng_seed is not None:
            kwargs["rng"] = random.Random(rng_seed)
        clients[name] = ChatClient(backend, config, **kwargs)
    return clients
