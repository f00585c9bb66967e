from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KITCHEN
from tourgraph.association import AssociationStrategy, build_graph
from tourgraph.backends import BackendProfile, MockBackend, mock_backend
from tourgraph.bench import make_large_graph
from tourgraph.errors import BackendUnavailable, ContextOverflow, InvalidArgument
from tourgraph.extraction import FrameManifest, extract_all
from tourgraph.graph import new_graph
from tourgraph.query import (
    NOT_FOUND,
    Query,
    answer,
    answer_chunkwise,
    answer_full,
    answer_retrieval,
    decompose_query,
    rank_frames,
)

SCENE = json.loads((KITCHEN / "scenes" / "kitchen-tour.json").read_text())
GT = {o["label"]: set(o["frames"]) for o in SCENE["objects"]}


@pytest.fixture(scope="module")
def built():
    backend = mock_backend(KITCHEN)
    chunks = list(extract_all(FrameManifest.load(KITCHEN / "manifest.json"), backend))
    g = build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", total_frames=24)
    return g, chunks


def test_query_validation():
    with pytest.raises(InvalidArgument):
        Query("  ")
    with pytest.raises(InvalidArgument):
        Query("which?", options={"A": "x"})
    with pytest.raises(InvalidArgument):
        Query("which?", qtype="trivia")
    assert Query("find the red mug").token_count == 4


def test_decompose_entity_and_color(kitchen_backend):
    plan = decompose_query(Query("Where is the red fire extinguisher?"), kitchen_backend)
    assert plan.entities == ("fire extinguisher",)
    assert plan.attributes == {"color": "red"}
    assert not plan.unstructured


def test_decompose_unstructured(kitchen_backend):
    plan = decompose_query(Query("???"), kitchen_backend)
    assert plan.unstructured and not plan.fallback


def test_decompose_relation(kitchen_backend):
    plan = decompose_query(Query("What is left of the sofa?"), kitchen_backend)
    assert plan.relations == (("?", "left_of", "sofa"),)
    assert plan.entity_terms == ["sofa"]


def test_decompose_temporal_and_affordance(kitchen_backend):
    plan = decompose_query(Query("Where can I sit between frames 10 and 20?"), kitchen_backend)
    assert plan.temporal == (10, 20)
    assert plan.affordances == ("sit",)


class Broken(MockBackend):
    def __init__(self, ops=("decompose",)):
        super().__init__(BackendProfile(kind="mock", fixture_dir=str(KITCHEN)))
        self.ops = ops

    def _complete(self, op, prompt, images, payload, key):
        if op in self.ops:
            raise BackendUnavailable("down")
        return super()._complete(op, prompt, images, payload, key)


def test_decompose_backend_failure_falls_back():
    plan = decompose_query(Query("find the kettle"), Broken())
    assert plan.fallback and plan.unstructured
    assert plan.entity_terms == ["kettle"]


def test_retrieval_find_kettle(built, kitchen_backend):
    g, _ = built
    res = answer_retrieval(g, Query("find the kettle"), kitchen_backend)
    assert res.ranked_frames[0] in GT["kettle"]
    assert res.mode == "R" and res.confidence == "resolved"
    sub_frames = {f for n in res.explanation.subgraph for f in n.frame_indices}
    assert set(res.ranked_frames) <= sub_frames


def test_retrieval_nothing_found(built, kitchen_backend):
    g, _ = built
    res = answer_retrieval(g, Query("Where is the piano?"), kitchen_backend)
    assert res.ranked_frames == [] and res.answer_text == NOT_FOUND
    assert kitchen_backend.calls("reason") == []


def test_retrieval_scripted_multiple_choice(built, kitchen_backend):
    g, _ = built
    q = Query("Which option names the kettle's color?", options={"A": "blue", "B": "red", "C": "green"})
    res = answer_retrieval(g, q, kitchen_backend)
    assert res.chosen_option == "B"


def test_retrieval_option_by_overlap(built, kitchen_backend):
    g, _ = built
    q = Query("What color is the fridge?", options={"A": "white", "B": "black"})
    assert answer_retrieval(g, q, kitchen_backend).chosen_option == "A"
    q = Query("What is left of the sofa?", options={"A": "door", "B": "lamp"})
    res = answer_retrieval(g, q, kitchen_backend)
    assert res.chosen_option == "B"
    assert res.ranked_frames[0] in GT["lamp"]


class BogusIds(MockBackend):
    def __init__(self):
        super().__init__(BackendProfile(kind="mock", fixture_dir=str(KITCHEN)))

    def _op_reason(self, payload, key):
        real = payload["graph"]["nodes"][0]["id"]
        return json.dumps({"answer": "x", "option": None, "object_ids_ranked": ["g:999", real], "confidence": "partial"})


def test_unknown_ids_dropped_and_degraded(built):
    g, _ = built
    res = answer_retrieval(g, Query("find the kettle"), BogusIds())
    assert res.degraded and res.warnings
    assert res.ranked_frames and res.ranked_frames[0] in GT["kettle"]


def test_full_matches_retrieval_on_tiny_fixture(built, kitchen_backend):
    g, _ = built
    for text in ("find the kettle", "Where is the red fire extinguisher?", "Where can I sit?"):
        r = answer_retrieval(g, Query(text), kitchen_backend)
        f = answer_full(g, Query(text), kitchen_backend)
        assert f.ranked_frames[0] == r.ranked_frames[0]
        assert f.answer_text == r.answer_text


def test_full_context_overflow():
    g = make_large_graph(10_000)
    backend = mock_backend(KITCHEN, context_limit=32_000)
    with pytest.raises(ContextOverflow) as info:
        answer_full(g, Query("Where is the fire extinguisher?"), backend)
    assert "--mode R" in str(info.value)
    assert info.value.exit_code == 4
    assert backend.calls("reason") == []


def test_full_empty_graph(kitchen_backend):
    res = answer_full(new_graph("t", 10, 8), Query("find the kettle"), kitchen_backend)
    assert res.answer_text == NOT_FOUND and res.ranked_frames == []


def test_chunkwise_goal_in_middle_chunk(built, kitchen_backend):
    _, chunks = built
    res = answer_chunkwise(chunks, Query("find the table"), kitchen_backend, trajectory_id="kitchen-tour", total_frames=24)
    assert res.explanation.chunk_index == 1
    lo, hi = chunks[1].frame_range
    assert res.ranked_frames and all(lo <= f <= hi for f in res.ranked_frames)
    assert not res.unresolved


def test_chunkwise_early_stop_call_count(built):
    _, chunks = built
    backend = mock_backend(KITCHEN)
    res = answer_chunkwise(chunks, Query("find the kettle"), backend, trajectory_id="kitchen-tour", total_frames=24)
    assert res.explanation.chunk_index == 0
    assert len(backend.calls("reason")) == 1


def test_chunkwise_absent_goal_is_unresolved(built, kitchen_backend):
    _, chunks = built
    res = answer_chunkwise(chunks, Query("find the piano"), kitchen_backend)
    assert res.unresolved and res.answer_text == NOT_FOUND


def test_chunkwise_requires_order(built, kitchen_backend):
    _, chunks = built
    with pytest.raises(InvalidArgument):
        answer_chunkwise(list(reversed(chunks)), Query("find the piano"), kitchen_backend)


def test_dispatch_and_determinism(built, kitchen_backend):
    g, chunks = built
    for mode in ("R", "F", "CWR"):
        a = answer(mode, Query("Where is the red fire extinguisher?"), kitchen_backend, graph=g, chunks=chunks, k_max=3)
        b = answer(mode, Query("Where is the red fire extinguisher?"), kitchen_backend, graph=g, chunks=chunks, k_max=3)
        assert a.to_dict(with_latency=False) == b.to_dict(with_latency=False)
        assert len(a.ranked_frames) <= 3
        assert a.ranked_frames[0] in GT["fire extinguisher"]
    with pytest.raises(InvalidArgument):
        answer("X", Query("hi"), kitchen_backend, graph=g)
    with pytest.raises(InvalidArgument):
        answer("CWR", Query("hi"), kitchen_backend, graph=g)


def test_rank_frames_examples():
    assert rank_frames([(1.0, [4, 2])]) == [2, 4]
    assert rank_frames([(0.9, [7]), (0.5, [3])]) == [7, 3]
    assert rank_frames([(0.5, [3, 7]), (0.9, [7])]) == [7, 3]
    assert rank_frames([(1.0, range(1, 20))], k_max=5) == [1, 2, 3, 4, 5]


def _rank_oracle(scored, k_max):
    best: dict[int, float] = {}
    for rel, frames in scored:
        for f in frames:
            best[f] = max(best.get(f, -1.0), rel)
    return [f for f, _ in sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))][:k_max]


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.lists(st.integers(1, 30), max_size=6)), max_size=6),
    st.integers(0, 8),
)
def test_rank_frames_oracle(scored, k_max):
    got = rank_frames(scored, k_max)
    assert got == _rank_oracle(scored, k_max)
    assert len(got) == len(set(got)) <= k_max
