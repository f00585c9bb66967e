from __future__ import annotations

import socket
from pathlib import Path

import pytest

from tourgraph.backends import mock_backend
from tourgraph.graph import BoundingBox, FrameRef, ObjectDescriptor, SpatialRelation

FIXTURES = Path(__file__).parent / "fixtures"
KITCHEN = FIXTURES / "kitchen"
RECURRING = FIXTURES / "recurring"
MALFORMED = FIXTURES / "malformed"


def frames(traj: str, *idx: int) -> tuple[FrameRef, ...]:
    return tuple(FrameRef(traj, i) for i in idx)


def obj(oid: str, label: str, idx, traj: str = "t", **kw) -> ObjectDescriptor:
    return ObjectDescriptor(id=oid, label=label, frames=frames(traj, *idx), **kw)


def rel(s: str, p: str, o: str, idx, traj: str = "t") -> SpatialRelation:
    return SpatialRelation(s, p, o, frames(traj, *idx))


def box(frame: int, traj: str = "t", x=0.1, y=0.1, w=0.2, h=0.2) -> BoundingBox:
    return BoundingBox(x, y, w, h, FrameRef(traj, frame))


@pytest.fixture
def kitchen_backend():
    return mock_backend(KITCHEN)


@pytest.fixture
def no_network(monkeypatch):
    """Any attempt to open a socket fails the test."""

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
