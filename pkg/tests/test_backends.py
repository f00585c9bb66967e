from __future__ import annotations

import json
import subprocess
import sys

import httpx
import pytest
from PIL import Image

from conftest import KITCHEN
from tourgraph.association import AssociationStrategy, build_graph, similarity
from tourgraph.backends import (
    BackendProfile,
    RemoteBackend,
    canonical_hash,
    estimate_tokens,
    make_backend,
    mock_backend,
    parse_json_reply,
)
from tourgraph.errors import (
    BackendAuthError,
    BackendError,
    BackendTimeout,
    BackendUnavailable,
    FixtureMiss,
    InvalidArgument,
    SchemaInvalid,
)
from tourgraph.extraction import FrameManifest, extract_all
from tourgraph.query import Query, answer

SIM_KEY = "2346cbe6487687ce9cef71aa1123f6aeaf18b40b0f60a3944808a1e682c2c4d5"


def test_profile_validation(tmp_path):
    with pytest.raises(InvalidArgument):
        BackendProfile(kind="remote-http", endpoint="http://x")
    with pytest.raises(InvalidArgument):
        BackendProfile(kind="mock")
    with pytest.raises(InvalidArgument):
        BackendProfile(kind="carrier-pigeon", fixture_dir="x")
    p = tmp_path / "profile.json"
    p.write_text(json.dumps({"kind": "remote-http", "endpoint": "http://x", "model": "m", "max_retries": 1}))
    prof = BackendProfile.from_file(p)
    assert prof.max_retries == 1 and isinstance(make_backend(prof), RemoteBackend)


def test_mock_fixture_hit_returns_scripted_value(kitchen_backend):
    s = similarity("large white fridge", "big white refrigerator", kitchen_backend)
    assert s.value == 0.92
    assert kitchen_backend.calls()[0].prompt_hash == SIM_KEY


def test_mock_miss_names_key(kitchen_backend):
    with pytest.raises(FixtureMiss) as info:
        kitchen_backend.complete_multimodal("p", [], op="extract", payload={"trajectory_id": "nowhere", "frames": [1]})
    assert info.value.key in str(info.value)
    assert info.value.key == canonical_hash("extract", {"trajectory_id": "nowhere", "frames": [1]})
    assert kitchen_backend.calls()[0].outcome == "FixtureMiss"


def test_unknown_op_rejected(kitchen_backend):
    with pytest.raises(InvalidArgument):
        kitchen_backend.complete_text("p", op="dream")


def test_usage_records(tmp_path):
    backend = mock_backend(KITCHEN)
    backend.write_call_log(tmp_path / "empty.jsonl")
    assert (tmp_path / "empty.jsonl").read_text() == ""
    for i in range(4):
        similarity(f"chair {i}", "chair", backend)
    assert len(backend.calls()) == 4 and len(backend.calls("similarity")) == 4
    backend.write_call_log(tmp_path / "calls.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "calls.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    assert {"op", "prompt_hash", "prompt_tokens", "completion_tokens", "latency_ms", "outcome", "attempts"} <= set(rows[0])


def test_canonical_hash_stable_across_processes():
    payload = {"b": [1, 2], "a": {"y": "é", "x": None}}
    code = (
        "from tourgraph.backends import canonical_hash;"
        "print(canonical_hash('reason', {'a': {'x': None, 'y': 'é'}, 'b': [1, 2]}))"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout.strip()
    assert out == canonical_hash("reason", payload)


def test_parse_json_reply():
    assert parse_json_reply('{"a": 1}') == {"a": 1}
    assert parse_json_reply('```json\n{"a": [1, 2,],}\n```') == {"a": [1, 2]}
    with pytest.raises(SchemaInvalid) as info:
        parse_json_reply("nope")
    assert info.value.raw == "nope"


def test_estimate_tokens():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2


def test_mock_pipeline_makes_no_network_calls(no_network, tmp_path):
    backend = mock_backend(KITCHEN)
    chunks = list(extract_all(FrameManifest.load(KITCHEN / "manifest.json"), backend))
    g = build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", total_frames=24)
    for mode in ("R", "F", "CWR"):
        answer(mode, Query("find the kettle"), backend, graph=g, chunks=chunks)
    with pytest.raises(AssertionError, match="network"):
        httpx.get("http://127.0.0.1:9/")


# -- remote --------------------------------------------------------------------

def _ok(text="hello", usage=None):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = usage
    return httpx.Response(200, json=body)


def _remote(handler, monkeypatch=None, **kw):
    prof = BackendProfile(kind="remote-http", endpoint="http://provider.test/v1", model="vlm-test", backoff=0.5, **kw)
    sleeps: list[float] = []
    backend = RemoteBackend(prof, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return backend, sleeps


def test_remote_retries_429_then_succeeds(monkeypatch):
    monkeypatch.setenv("TOURGRAPH_API_KEY", "secret")
    seen = []

    def handler(request: httpx.Request):
        seen.append(request)
        return httpx.Response(429) if len(seen) == 1 else _ok("0.8", {"prompt_tokens": 11, "completion_tokens": 1})

    backend, sleeps = _remote(handler)
    assert backend.complete_text("hi", op="similarity") == "0.8"
    rec = backend.calls()[0]
    assert rec.attempts == 2 and rec.outcome == "ok"
    assert rec.prompt_tokens == 11 and rec.completion_tokens == 1
    assert sleeps == [0.5]
    req = seen[0]
    assert req.url.path == "/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer secret"
    body = json.loads(req.content)
    assert body["model"] == "vlm-test"
    assert body["messages"][0]["content"][0] == {"type": "text", "text": "hi"}


def test_remote_multimodal_parts(tmp_path):
    img = tmp_path / "f1.png"
    Image.new("RGB", (4, 4), "red").save(img)
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return _ok("{}")

    backend, _ = _remote(handler)
    backend.complete_multimodal("describe", [str(img)], op="extract")
    parts = seen[0]["messages"][0]["content"]
    assert parts[1]["type"] == "image_url"
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_remote_auth_is_fatal():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    backend, sleeps = _remote(handler)
    with pytest.raises(BackendAuthError):
        backend.complete_text("hi", op="reason")
    assert len(calls) == 1 and sleeps == []


def test_remote_gives_up_after_retries():
    backend, sleeps = _remote(lambda r: httpx.Response(503), max_retries=2)
    with pytest.raises(BackendUnavailable) as info:
        backend.complete_text("hi", op="reason")
    assert info.value.retryable
    assert backend.calls()[0].attempts == 3
    assert sleeps == [0.5, 1.0]


def test_remote_timeout_is_retryable():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    backend, _ = _remote(handler, max_retries=1)
    with pytest.raises(BackendTimeout):
        backend.complete_text("hi", op="reason")


def test_remote_client_error_and_bad_shape():
    backend, _ = _remote(lambda r: httpx.Response(400, text="bad"))
    with pytest.raises(BackendError):
        backend.complete_text("hi", op="reason")
    backend, _ = _remote(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(BackendError):
        backend.complete_text("hi", op="reason")
