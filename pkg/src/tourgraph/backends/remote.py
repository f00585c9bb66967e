"""Chat-completions style HTTP client for hosted vision-language models."""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import time
from pathlib import Path
from typing import Callable

import httpx

from ..errors import BackendAuthError, BackendError, BackendTimeout, BackendUnavailable, DataError
from .base import Backend, BackendProfile, _Reply

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


def image_part(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"frame image not found: {path}")
    mime = mimetypes.guess_type(p.name)[0] or "image/png"
    data = base64.b64encode(p.read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}}


class RemoteBackend(Backend):
    kind = "remote-http"
    similarity_source = "semantic-llm"

    def __init__(
        self,
        profile: BackendProfile,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(profile)
        self._client = httpx.Client(timeout=profile.timeout, transport=transport)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.profile.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _body(self, prompt: str, images: tuple[str, ...]) -> dict:
        content: list[dict] = [{"type": "text", "text": prompt}]
        content.extend(image_part(p) for p in images)
        return {
            "model": self.profile.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }

    def _complete(self, op, prompt, images, payload, key) -> _Reply:
        url = self.profile.endpoint.rstrip("/") + "/chat/completions"
        body = self._body(prompt, images)
        attempts = 0
        last: BackendError | None = None
        while attempts <= self.profile.max_retries:
            if attempts:
                self._sleep(self.profile.backoff * 2 ** (attempts - 1))
            attempts += 1
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"{op}: request timed out ({exc})")
                continue
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"{op}: transport error ({exc})")
                continue
            if resp.status_code in (401, 403):
                err = BackendAuthError(
                    f"{op}: provider rejected credentials (HTTP {resp.status_code}); "
                    f"check ${self.profile.api_key_env}"
                )
                err.attempts = attempts
                raise err
            if resp.status_code in RETRYABLE_STATUS:
                log.warning("%s: HTTP %s, retrying (attempt %d)", op, resp.status_code, attempts)
                last = BackendUnavailable(f"{op}: HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                err = BackendError(f"{op}: HTTP {resp.status_code}: {resp.text[:200]}")
                err.attempts = attempts
                raise err
            return self._parse(resp, attempts)
        assert last is not None
        last.attempts = attempts
        raise last

    @staticmethod
    def _parse(resp: httpx.Response, attempts: int) -> _Reply:
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected provider response shape: {exc}") from None
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        usage = data.get("usage") or {}
        return _Reply(
            text=content,
            attempts=attempts,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )
