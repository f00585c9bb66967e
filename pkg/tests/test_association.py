from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KITCHEN, RECURRING, box, obj, rel
from oracles import all_matchings, greedy_matching
from tourgraph.association import (
    AssociationStrategy,
    box_iou,
    build_graph,
    candidate_pairs,
    resolve_matching,
    similarity,
    stoa_update,
    visual_similarity,
    write_audit,
)
from tourgraph.backends import BackendProfile, MockBackend, mock_backend
from tourgraph.backends.base import _Reply
from tourgraph.errors import BackendUnavailable, InvalidArgument, InvalidState
from tourgraph.extraction import ExtractionConfig, FrameManifest, extract_all
from tourgraph.graph import ChunkGraph, new_graph


def test_mock_similarity_examples(kitchen_backend):
    assert similarity("red chair", "red chair", kitchen_backend).value == 1.0
    assert similarity("red chair", "blue sofa", kitchen_backend).value == 0.0
    s = similarity("red chair near table", "red chair", kitchen_backend)
    assert s.value == 0.5
    assert s.source == "mock-lexical"


class ScriptedSimilarity(MockBackend):
    def __init__(self, reply: str):
        super().__init__(BackendProfile(kind="mock", fixture_dir=str(KITCHEN)))
        self.reply = reply

    def _complete(self, op, prompt, images, payload, key):
        return _Reply(self.reply)


def test_out_of_range_similarity_is_clamped_with_warning():
    warnings: list[str] = []
    assert similarity("a", "b", ScriptedSimilarity("Score: 1.7"), warnings).value == 1.0
    assert len(warnings) == 1 and "clamped" in warnings[0]


def test_similarity_needs_text(kitchen_backend):
    with pytest.raises(InvalidArgument):
        similarity("", "chair", kitchen_backend)


def _prev(*labels):
    g = new_graph("t", 100, 8)
    nodes = [obj(f"g:{i}", lab, [1]) for i, lab in enumerate(labels)]
    from tourgraph.graph import from_parts

    return from_parts("t", 100, 8, nodes, last_chunk_applied=0, next_serial=len(nodes)) if nodes else g


def _chunk(k, *labels, frames=None):
    lo = k * 8 + 1
    objs = tuple(obj(f"c{k}:{i}", lab, frames or [lo]) for i, lab in enumerate(labels))
    return ChunkGraph(k, (lo, lo + 7), objs)


def test_candidate_pairs_label_rule():
    g = _prev("chair", "table")
    assert candidate_pairs(g, _chunk(1, "chair")) == [("g:0", "c1:0")]
    assert candidate_pairs(_prev("chair"), _chunk(1, "fire extinguisher")) == []
    assert candidate_pairs(_prev("table"), _chunk(1, "coffee table")) == [("g:0", "c1:0")]
    assert len(candidate_pairs(g, _chunk(1, "chair"), "all")) == 2


def test_resolve_matching_examples():
    scored = [("a", "x", 0.9), ("a", "y", 0.8), ("b", "y", 0.85)]
    assert set(resolve_matching(scored, 0.7)) == {("a", "x"), ("b", "y")}
    assert resolve_matching([("a", "x", 0.7), ("b", "y", 0.2)], 0.7) == []
    assert resolve_matching([("a", "x", 0.71)], 0.7) == [("a", "x")]


def test_resolve_matching_tie_break():
    assert resolve_matching([("b", "x", 0.8), ("a", "x", 0.8)], 0.5) == [("a", "x")]


scored_pairs = st.lists(
    st.tuples(st.sampled_from("abcd"), st.sampled_from("wxyz"), st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.75, 0.9, 1.0])),
    max_size=8,
    unique_by=lambda t: (t[0], t[1]),
)


@settings(max_examples=300, deadline=None)
@given(scored_pairs, st.sampled_from([0.3, 0.5, 0.7, 0.9]))
def test_resolve_matching_against_oracles(scored, tau):
    got = resolve_matching(scored, tau)
    assert set(got) == greedy_matching(scored, tau)
    # the result is one of the valid one-to-one matchings and respects the threshold
    score = {(p, c): s for p, c, s in scored}
    assert any(set(got) == {(p, c) for p, c, _ in m} for m in all_matchings(scored, tau))
    assert all(score[pair] > tau for pair in got)


@settings(max_examples=200, deadline=None)
@given(scored_pairs)
def test_match_count_monotone_in_tau(scored):
    counts = [len(resolve_matching(scored, t)) for t in (0.3, 0.5, 0.7, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_stoa_initializes_from_first_chunk(kitchen_backend):
    g = stoa_update(new_graph("t", 100, 8), _chunk(0, "chair", "table", "lamp"), backend=kitchen_backend)
    assert len(g) == 3
    assert set(g.nodes) == {"g:0", "g:1", "g:2"}
    assert g.last_chunk_applied == 0


def test_stoa_merges_identical_description(kitchen_backend):
    g = stoa_update(new_graph("t", 100, 8), _chunk(0, "chair", frames=[2, 3]), backend=kitchen_backend)
    g = stoa_update(g, _chunk(1, "chair", frames=[9, 10]), backend=kitchen_backend)
    assert len(g) == 1
    assert g.node("g:0").frame_indices == [2, 3, 9, 10]
    assert g.node("g:0").provenance == (0, 1)


def test_stoa_none_strategy_never_merges(kitchen_backend):
    none = AssociationStrategy(kind="none")
    g = stoa_update(new_graph("t", 100, 8), _chunk(0, "chair"), none)
    g2 = stoa_update(g, _chunk(1, "chair", "chair"), none)
    assert len(g2) == len(g) + 2


def test_stoa_repoints_relations(kitchen_backend):
    g = stoa_update(new_graph("t", 100, 8), _chunk(0, "chair", "table"), backend=kitchen_backend)
    c1 = ChunkGraph(1, (9, 16), (obj("c1:0", "chair", [9]), obj("c1:1", "lamp", [9])), (rel("c1:1", "near", "c1:0", [9]),))
    g = stoa_update(g, c1, backend=kitchen_backend)
    assert [e.key for e in g.edges] == [("g:2", "near", "g:0")]
    g.check_invariants()


def test_stoa_out_of_order(kitchen_backend):
    with pytest.raises(InvalidState):
        stoa_update(new_graph("t", 100, 8), _chunk(1, "chair"), backend=kitchen_backend)


class DownBackend(MockBackend):
    def __init__(self):
        super().__init__(BackendProfile(kind="mock", fixture_dir=str(KITCHEN)))

    def _complete(self, op, prompt, images, payload, key):
        raise BackendUnavailable("down")


def test_stoa_backend_failure_leaves_graph_unchanged(kitchen_backend):
    g = stoa_update(new_graph("t", 100, 8), _chunk(0, "chair"), backend=kitchen_backend)
    snapshot = g.copy()
    with pytest.raises(BackendUnavailable) as info:
        stoa_update(g, _chunk(1, "chair"), backend=DownBackend())
    assert info.value.retryable
    assert g == snapshot


def test_visual_stub_uses_boundary_boxes():
    a = obj("g:0", "chair", [7, 8], bboxes=(box(8, x=0.1, y=0.1, w=0.2, h=0.2),))
    b = obj("c1:0", "chair", [9], bboxes=(box(9, x=0.1, y=0.1, w=0.2, h=0.2),))
    assert visual_similarity(a, b).value == pytest.approx(1.0)
    half = box(9, x=0.2, y=0.1, w=0.2, h=0.2)
    assert box_iou(box(8, x=0.1, y=0.1, w=0.2, h=0.2), half) == pytest.approx(1 / 3)


def _chunks(fixture, traj_manifest):
    backend = mock_backend(fixture)
    return list(extract_all(FrameManifest.load(traj_manifest), backend, ExtractionConfig())), backend


def test_build_graph_recurring_object_reaches_distinct_count():
    chunks, backend = _chunks(KITCHEN, KITCHEN / "manifest.json")
    g = build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", total_frames=24)
    scene = json.loads((KITCHEN / "scenes" / "kitchen-tour.json").read_text())
    assert len(g) == len(scene["objects"])
    assert g.last_chunk_applied == 2
    again = build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", total_frames=24)
    assert g == again


def test_build_graph_hallway_ground_truth():
    chunks, backend = _chunks(RECURRING, RECURRING / "manifest.json")
    scene = json.loads((RECURRING / "scenes" / "hallway-loop.json").read_text())
    g = build_graph(chunks, AssociationStrategy(), backend, trajectory_id="hallway-loop", total_frames=32)
    assert len(g) == scene["ground_truth_distinct_objects"]
    none = build_graph(chunks, AssociationStrategy(kind="none"), backend, trajectory_id="hallway-loop", total_frames=32)
    assert len(none) == sum(len(c.objects) for c in chunks)


def test_build_graph_empty_stream():
    g = build_graph([], AssociationStrategy(kind="none"), trajectory_id="t")
    assert len(g) == 0 and g.edges == [] and g.last_chunk_applied == -1


def test_build_graph_fills_skipped_chunks(kitchen_backend):
    g = build_graph([_chunk(0, "chair"), _chunk(2, "chair")], AssociationStrategy(), kitchen_backend)
    assert g.last_chunk_applied == 2 and len(g) == 1


def test_audit_records(tmp_path):
    chunks, backend = _chunks(KITCHEN, KITCHEN / "manifest.json")
    audit: list = []
    build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", audit=audit)
    path = tmp_path / "audit.jsonl"
    write_audit(path, audit)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows and set(rows[0]) == {"k", "prev_id", "chunk_id", "score", "associated", "tau"}
    for d in audit:
        assert d.associated == (d.score.value > d.tau) or not d.associated
        if d.associated:
            assert d.score.value > d.tau
