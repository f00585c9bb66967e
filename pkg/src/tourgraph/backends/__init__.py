from __future__ import annotations

from .base import (
    Backend,
    BackendCallRecord,
    BackendProfile,
    canonical_hash,
    canonical_json,
    estimate_tokens,
    parse_json_reply,
)
from .mock import MockBackend
from .remote import RemoteBackend

__all__ = [
    "Backend",
    "BackendCallRecord",
    "BackendProfile",
    "MockBackend",
    "RemoteBackend",
    "canonical_hash",
    "canonical_json",
    "estimate_tokens",
    "make_backend",
    "mock_backend",
    "parse_json_reply",
]


def make_backend(profile: BackendProfile, **kwargs) -> Backend:
    if profile.kind == "mock":
        return MockBackend(profile)
    return RemoteBackend(profile, **kwargs)


def mock_backend(fixture_dir, **overrides) -> MockBackend:
    return MockBackend(BackendProfile(kind="mock", fixture_dir=str(fixture_dir), **overrides))
