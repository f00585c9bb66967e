"""Spatiotemporal object association: folding chunk graphs into the accumulated graph.

Each update scores label-compatible (previous node, chunk object) pairs,
keeps the pairs whose score is strictly above the threshold, resolves them
greedily into a one-to-one matching and merges matched objects. Everything
else enters the graph under a fresh ``g:{serial}`` id.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backends import Backend
from .errors import InvalidArgument, InvalidState, SchemaInvalid
from .graph import (
    BoundingBox,
    ChunkGraph,
    KnowledgeGraph,
    MergePolicy,
    ObjectDescriptor,
    SpatialRelation,
    merge_descriptors,
)
from .lexicon import tokenize
from .prompts import load_template, render

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.7
SOURCES = ("semantic-llm", "mock-lexical", "visual", "none")
KINDS = ("semantic", "visual-stub", "none")

_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    source: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise InvalidArgument(f"similarity {self.value} outside [0, 1]")
        if self.source not in SOURCES:
            raise InvalidArgument(f"unknown similarity source {self.source!r}")


@dataclass(frozen=True)
class AssociationDecision:
    chunk_index: int
    prev_id: str
    chunk_id: str
    score: SimilarityScore
    associated: bool
    tau: float

    def to_record(self) -> dict:
        return {
            "k": self.chunk_index,
            "prev_id": self.prev_id,
            "chunk_id": self.chunk_id,
            "score": self.score.value,
            "associated": self.associated,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class AssociationStrategy:
    kind: str = "semantic"
    tau: float = DEFAULT_TAU
    merge_policy: MergePolicy = MergePolicy.PREFER_RICHER
    candidate_filter: str = "label"
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidArgument(f"association strategy must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidArgument(f"tau must lie in [0, 1], got {self.tau}")
        if self.candidate_filter not in ("label", "all"):
            raise InvalidArgument(f"unknown candidate filter {self.candidate_filter!r}")


def similarity(
    desc_a: str, desc_b: str, backend: Backend, warnings: list[str] | None = None
) -> SimilarityScore:
    if not desc_a.strip() or not desc_b.strip():
        raise InvalidArgument("similarity needs two non-empty descriptions")
    prompt = render(load_template("association.v1"), desc_a=desc_a, desc_b=desc_b)
    raw = backend.complete_text(prompt, op="similarity", payload={"a": desc_a, "b": desc_b})
    m = _NUMBER.search(raw)
    if not m:
        raise SchemaInvalid("similarity reply holds no number", raw=raw)
    value = float(m.group())
    if not 0.0 <= value <= 1.0:
        clamped = min(1.0, max(0.0, value))
        msg = f"similarity {value} out of range, clamped to {clamped}"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        value = clamped
    return SimilarityScore(value, backend.similarity_source)


def _box_at(o: ObjectDescriptor, frame: int) -> BoundingBox | None:
    return next((bb for bb in o.bboxes if bb.frame.index == frame), None)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return 0.0 if union <= 0 else min(1.0, inter / union)


def visual_similarity(prev: ObjectDescriptor, cur: ObjectDescriptor) -> SimilarityScore:
    """IoU of the previous node's last box against the chunk object's first box."""
    a = _box_at(prev, prev.frames[-1].index)
    b = _box_at(cur, cur.frames[0].index)
    return SimilarityScore(box_iou(a, b) if a and b else 0.0, "visual")


def candidate_pairs(
    g_prev: KnowledgeGraph, chunk: ChunkGraph, filter: str = "label"
) -> list[tuple[str, str]]:
    """Pairs worth scoring: same label or labels sharing a word (``filter='all'`` disables this)."""
    order = {nid: i for i, nid in enumerate(g_prev.nodes)}
    by_token: dict[str, list[str]] = {}
    if filter == "label":
        for node in g_prev.nodes.values():
            for tok in set(tokenize(node.label)):
                by_token.setdefault(tok, []).append(node.id)
    pairs = []
    for obj in chunk.objects:
        if filter == "all":
            prev_ids = list(order)
        else:
            found = {nid for tok in set(tokenize(obj.label)) for nid in by_token.get(tok, ())}
            prev_ids = sorted(found, key=order.__getitem__)
        pairs.extend((pid, obj.id) for pid in prev_ids)
    return pairs


def resolve_matching(scored: Iterable[tuple[str, str, float]], tau: float) -> list[tuple[str, str]]:
    """Greedy one-to-one matching: best score first, ties by (prev_id, chunk_id); only scores > tau."""
    used_prev: set[str] = set()
    used_chunk: set[str] = set()
    out = []
    for prev_id, chunk_id, score in sorted(scored, key=lambda t: (-t[2], t[0], t[1])):
        if score <= tau:
            break
        if prev_id in used_prev or chunk_id in used_chunk:
            continue
        used_prev.add(prev_id)
        used_chunk.add(chunk_id)
        out.append((prev_id, chunk_id))
    return out


def score_pairs(
    g_prev: KnowledgeGraph,
    chunk: ChunkGraph,
    pairs: Sequence[tuple[str, str]],
    strategy: AssociationStrategy,
    backend: Backend,
) -> list[SimilarityScore]:
    objs = {o.id: o for o in chunk.objects}
    if strategy.kind == "visual-stub":
        return [visual_similarity(g_prev.node(p), objs[c]) for p, c in pairs]

    def one(pair: tuple[str, str]) -> SimilarityScore:
        p, c = pair
        return similarity(g_prev.node(p).description, objs[c].description, backend)

    if strategy.parallelism > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=strategy.parallelism) as pool:
            return list(pool.map(one, pairs))
    return [one(pair) for pair in pairs]


def associate(
    g_prev: KnowledgeGraph, chunk: ChunkGraph, strategy: AssociationStrategy, backend: Backend
) -> tuple[list[tuple[str, str]], list[AssociationDecision]]:
    if strategy.kind == "none" or len(g_prev) == 0:
        return [], []
    pairs = candidate_pairs(g_prev, chunk, strategy.candidate_filter)
    scores = score_pairs(g_prev, chunk, pairs, strategy, backend)
    matches = resolve_matching(
        [(p, c, s.value) for (p, c), s in zip(pairs, scores)], strategy.tau
    )
    chosen = set(matches)
    decisions = [
        AssociationDecision(chunk.chunk_index, p, c, s, (p, c) in chosen, strategy.tau)
        for (p, c), s in zip(pairs, scores)
    ]
    return matches, decisions


def stoa_update(
    g_prev: KnowledgeGraph,
    chunk: ChunkGraph,
    strategy: AssociationStrategy | None = None,
    backend: Backend | None = None,
    audit: list[AssociationDecision] | None = None,
) -> KnowledgeGraph:
    strategy = strategy or AssociationStrategy()
    expected = g_prev.last_chunk_applied + 1
    if chunk.chunk_index != expected:
        raise InvalidState(f"chunk {chunk.chunk_index} applied out of order; expected chunk {expected}")
    if strategy.kind == "semantic" and backend is None and len(g_prev) and chunk.objects:
        raise InvalidArgument("semantic association needs a backend")

    matches, decisions = associate(g_prev, chunk, strategy, backend)

    g = g_prev.copy()
    k = chunk.chunk_index
    objs = {o.id: replace(o, provenance=(*o.provenance, k)) for o in chunk.objects}
    mapping: dict[str, str] = {}
    for prev_id, chunk_id in matches:
        g._put_node(merge_descriptors(g.node(prev_id), objs[chunk_id], strategy.merge_policy))
        mapping[chunk_id] = prev_id
    for obj in objs.values():
        if obj.id in mapping:
            continue
        new_id = f"g:{g.next_serial}"
        g.next_serial += 1
        g._put_node(replace(obj, id=new_id, relationships=()))
        mapping[obj.id] = new_id
    for rel in chunk.relations:
        g._put_edge(SpatialRelation(mapping[rel.subject_id], rel.predicate, mapping[rel.object_id], rel.frames))
    g.last_chunk_applied = k

    if audit is not None:
        audit.extend(decisions)
    return g


def build_graph(
    chunks: Iterable[ChunkGraph],
    strategy: AssociationStrategy | None = None,
    backend: Backend | None = None,
    *,
    trajectory_id: str = "trajectory",
    total_frames: int = 0,
    chunk_size: int = 8,
    audit: list[AssociationDecision] | None = None,
    on_chunk: Callable[[ChunkGraph, KnowledgeGraph, int], None] | None = None,
) -> KnowledgeGraph:
    """Fold a chunk stream into the final graph.

    Chunks missing from the stream (skipped on extraction failure) are applied
    as empty chunk graphs so chunk accounting stays contiguous.
    """
    g = KnowledgeGraph(trajectory_id, total_frames, chunk_size)
    for chunk in chunks:
        while chunk.chunk_index > g.last_chunk_applied + 1:
            k = g.last_chunk_applied + 1
            log.warning("chunk %d missing from stream; applying it as empty", k)
            g = stoa_update(g, ChunkGraph(k, (k * chunk_size + 1, (k + 1) * chunk_size)), strategy, backend)
        sink: list[AssociationDecision] = []
        g = stoa_update(g, chunk, strategy, backend, audit=sink)
        if audit is not None:
            audit.extend(sink)
        if on_chunk is not None:
            on_chunk(chunk, g, sum(d.associated for d in sink))
    return g


def write_audit(path: str | Path, decisions: Iterable[AssociationDecision]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_record(), sort_keys=True) + "\n")
