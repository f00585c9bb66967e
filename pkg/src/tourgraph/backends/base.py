from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..errors import BackendError, InvalidArgument, SchemaInvalid

OPS = ("extract", "similarity", "decompose", "reason")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_hash(op: str, payload: Any) -> str:
    """Stable key for a logical backend input; independent of process and dict order."""
    return hashlib.sha256(canonical_json({"op": op, "input": payload}).encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    # ~4 characters per token is the usual rule of thumb for English + JSON
    return (len(text) + 3) // 4


_FENCE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.S)
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def parse_json_reply(raw: str) -> Any:
    """Strict JSON, with a single repair pass (code fences, trailing commas)."""
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        pass
    text = raw if isinstance(raw, str) else ""
    m = _FENCE.match(text)
    if m:
        text = m.group(1)
    text = _TRAILING_COMMA.sub(r"\1", text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaInvalid(f"backend reply is not valid JSON after repair: {exc}", raw=raw) from None


@dataclass
class BackendProfile:
    kind: str = "mock"
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "TOURGRAPH_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    context_limit: int = 32_000
    fixture_dir: str | None = None
    scripted_answers: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote-http"):
            raise InvalidArgument(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote-http" and not (self.endpoint and self.model):
            raise InvalidArgument("remote backend needs both an endpoint and a model name")
        if self.kind == "mock" and not self.fixture_dir:
            raise InvalidArgument("mock backend needs a fixture directory")
        if self.max_retries < 0 or self.context_limit < 1:
            raise InvalidArgument("max_retries must be >= 0 and context_limit >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> BackendProfile:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


@dataclass
class BackendCallRecord:
    op: str
    prompt_hash: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    outcome: str
    attempts: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Reply:
    text: str
    attempts: int = 1
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class Backend:
    """Common surface of every model backend.

    ``payload`` carries the structured input behind a prompt. Remote providers
    only see the prompt text; the mock keys its fixtures on the payload.
    """

    kind = "abstract"
    similarity_source = "semantic-llm"

    def __init__(self, profile: BackendProfile):
        self.profile = profile
        self.context_limit = profile.context_limit
        self.records: list[BackendCallRecord] = []
        self._lock = threading.Lock()

    def complete_text(self, prompt: str, *, op: str, payload: Any = None) -> str:
        return self._call(op, prompt, (), payload)

    def complete_multimodal(
        self, prompt: str, images: Sequence[str], *, op: str, payload: Any = None
    ) -> str:
        return self._call(op, prompt, tuple(images), payload)

    def record_usage(self, record: BackendCallRecord) -> BackendCallRecord:
        with self._lock:
            self.records.append(record)
        return record

    def calls(self, op: str | None = None) -> list[BackendCallRecord]:
        with self._lock:
            return [r for r in self.records if op is None or r.op == op]

    def write_call_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.calls():
                fh.write(canonical_json(rec.to_dict()) + "\n")

    def _call(self, op: str, prompt: str, images: tuple[str, ...], payload: Any) -> str:
        if op not in OPS:
            raise InvalidArgument(f"unknown backend op {op!r}")
        key = canonical_hash(op, payload if payload is not None else prompt)
        start = time.perf_counter()
        try:
            reply = self._complete(op, prompt, images, payload, key)
        except BackendError as exc:
            self.record_usage(
                BackendCallRecord(
                    op=op,
                    prompt_hash=key,
                    prompt_tokens=estimate_tokens(prompt),
                    completion_tokens=0,
                    latency_ms=(time.perf_counter() - start) * 1000.0,
                    outcome=type(exc).__name__,
                    attempts=getattr(exc, "attempts", 1),
                )
            )
            raise
        self.record_usage(
            BackendCallRecord(
                op=op,
                prompt_hash=key,
                prompt_tokens=reply.prompt_tokens if reply.prompt_tokens is not None else estimate_tokens(prompt),
                completion_tokens=(
                    reply.completion_tokens
                    if reply.completion_tokens is not None
                    else estimate_tokens(reply.text)
                ),
                latency_ms=(time.perf_counter() - start) * 1000.0,
                outcome="ok",
                attempts=reply.attempts,
            )
        )
        return reply.text

    def _complete(
        self, op: str, prompt: str, images: tuple[str, ...], payload: Any, key: str
    ) -> _Reply:
        raise NotImplementedError
