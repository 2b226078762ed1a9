"""Generic OpenAI-compatible HTTP chat backend.

One wire shape serves every hosted model; the exact payload is documented
in the README. Auth comes from the environment variable named in the
config, never from the config file itself.
"""

from __future__ import annotations

import base64
import os
from pathlib import Path

import requests

from ..errors import AuthMissingError, BackendError
from .core import Backend, ChatRequest

_IMAGE_MIME = {".jpg": "image/jpeg", ".jpeg": "image/jpeg", ".png": "image/png"}


def encode_image_ref(ref: str) -> str:
    """Local files become data URIs; anything else passes through as a URL."""
    path = Path(ref)
    if path.is_file():
        mime = _IMAGE_MIME.get(path.suffix.lower(), "application/octet-stream")
        payload = base64.b64encode(path.read_bytes()).decode("ascii")
        return f"data:{mime};base64,{payload}"
    return ref


def build_payload(request: ChatRequest, model: str) -> dict:
    """Chat-completion JSON body for one request."""
    content = [{"type": "text", "text": part} for part in request.prompt_parts]
    for image in request.images:
        content.append({"type": "image_url", "image_url": {"url": encode_image_ref(image)}})
    if request.video is not None:
        content.append({"type": "video_url", "video_url": {"url": request.video}})
    return {
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": request.max_reply_tokens,
        "temperature": request.temperature,
    }


def extract_reply(data: dict) -> str:
    try:
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed chat-completion reply: {exc}") from exc


class HttpBackend(Backend):
    def __init__(self, config, session=None):
        self.config = config
        self.name = config.name
        self.session = session if session is not None else requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env:
            token = os.environ.get(self.config.auth_env)
            if token is None:
                raise AuthMissingError(
                    f"backend {self.config.name!r}: environment variable "
                    f"{self.config.auth_env!r} is unset"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def send(self, request: ChatRequest) -> str:
        response = self.session.post(
            self.config.endpoint,
            json=build_payload(request, self.config.name),
            headers=self._headers(),
            timeout=self.config.timeout,
        )
        response.raise_for_status()
        return extract_reply(response.json())
