"""File-backed graph store and criteria-based subgraph retrieval.

A graph file is one JSON document::

    {"manifest": {..., "content_hash": "<sha256>"},
     "graph": {"schema_version": 1, "meta": {...}, "nodes": [...], "edges": [...],
               "chunks": [...]}}

``content_hash`` is the SHA-256 of the canonical (sorted keys, compact)
serialization of ``graph``. Node and edge records use the same field layout
as the extraction wire format.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import CorruptFile, InvalidArgument, TourGraphError, UnsupportedVersion
from .graph import (
    BoundingBox,
    ChunkGraph,
    FrameRef,
    KnowledgeGraph,
    ObjectDescriptor,
    SpatialRelation,
    from_parts,
    hop_distances,
    induced_subgraph,
    normalize_predicate,
)
from .lexicon import Lexicon, contains_phrase, default_lexicon, tokenize

SCHEMA_VERSION = 1


# -- wire encoding -------------------------------------------------------------

def frame_to_wire(f: FrameRef) -> int | dict:
    if f.width_px is None and f.height_px is None:
        return f.index
    return {"index": f.index, "width": f.width_px, "height": f.height_px}


def frame_from_wire(value: Any, trajectory_id: str) -> FrameRef:
    if isinstance(value, dict):
        return FrameRef(trajectory_id, int(value["index"]), value.get("width"), value.get("height"))
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise InvalidArgument(f"frame must be an integer, got {value!r}")
    return FrameRef(trajectory_id, int(value))


def object_to_wire(o: ObjectDescriptor) -> dict:
    return {
        "id": o.id,
        "label": o.label,
        "color": list(o.color),
        "material": o.material,
        "size": o.size,
        "frames": [frame_to_wire(f) for f in o.frames],
        "bboxes": [
            {"frame": bb.frame.index, "x": bb.x, "y": bb.y, "w": bb.w, "h": bb.h} for bb in o.bboxes
        ],
        "affordances": list(o.affordances),
        "relationships": list(o.relationships),
        "description": o.description,
        "provenance": list(o.provenance),
    }


def object_from_wire(d: Mapping[str, Any], trajectory_id: str) -> ObjectDescriptor:
    frames = tuple(frame_from_wire(f, trajectory_id) for f in d.get("frames", []))
    by_index = {f.index: f for f in frames}
    bboxes = []
    for bb in d.get("bboxes", []) or []:
        idx = int(bb["frame"])
        frame = by_index.get(idx) or FrameRef(trajectory_id, idx)
        bboxes.append(BoundingBox(float(bb["x"]), float(bb["y"]), float(bb["w"]), float(bb["h"]), frame))
    color = d.get("color", [])
    return ObjectDescriptor(
        id=str(d["id"]),
        label=str(d["label"]),
        frames=frames,
        color=(color,) if isinstance(color, str) else tuple(color or ()),
        material=str(d.get("material") or ""),
        size=str(d.get("size") or "unknown"),
        bboxes=tuple(bboxes),
        affordances=tuple(d.get("affordances") or ()),
        relationships=tuple(d.get("relationships") or ()),
        provenance=tuple(int(p) for p in d.get("provenance") or ()),
    )


def relation_to_wire(r: SpatialRelation) -> dict:
    return {
        "subject_id": r.subject_id,
        "predicate": r.predicate,
        "object_id": r.object_id,
        "frames": [frame_to_wire(f) for f in r.frames],
    }


def relation_from_wire(d: Mapping[str, Any], trajectory_id: str) -> SpatialRelation:
    return SpatialRelation(
        subject_id=str(d["subject_id"]),
        predicate=normalize_predicate(str(d["predicate"])),
        object_id=str(d["object_id"]),
        frames=tuple(frame_from_wire(f, trajectory_id) for f in d.get("frames", [])),
    )


def chunk_to_wire(c: ChunkGraph) -> dict:
    return {
        "chunk_index": c.chunk_index,
        "frame_range": list(c.frame_range),
        "objects": [object_to_wire(o) for o in c.objects],
        "relations": [relation_to_wire(r) for r in c.relations],
    }


def chunk_from_wire(d: Mapping[str, Any], trajectory_id: str) -> ChunkGraph:
    return ChunkGraph(
        chunk_index=int(d["chunk_index"]),
        frame_range=tuple(int(x) for x in d["frame_range"]),
        objects=tuple(object_from_wire(o, trajectory_id) for o in d.get("objects", [])),
        relations=tuple(relation_from_wire(r, trajectory_id) for r in d.get("relations", [])),
    )


def graph_to_wire(g: KnowledgeGraph) -> dict:
    return {
        "meta": {
            **g.meta,
            "last_chunk_applied": g.last_chunk_applied,
            "next_serial": g.next_serial,
        },
        "nodes": [object_to_wire(o) for o in g.nodes.values()],
        "edges": [relation_to_wire(r) for r in g.edges],
    }


def graph_from_wire(d: Mapping[str, Any]) -> KnowledgeGraph:
    meta = d["meta"]
    traj = str(meta["trajectory_id"])
    return from_parts(
        traj,
        int(meta["total_frames"]),
        int(meta["chunk_size"]),
        [object_from_wire(o, traj) for o in d.get("nodes", [])],
        [relation_from_wire(r, traj) for r in d.get("edges", [])],
        last_chunk_applied=int(meta.get("last_chunk_applied", -1)),
        next_serial=int(meta.get("next_serial", 0)),
    )


def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(body: Any) -> str:
    return hashlib.sha256(canonical_dumps(body).encode("utf-8")).hexdigest()


# -- persistence ---------------------------------------------------------------

@dataclass(frozen=True)
class StoredGraphManifest:
    trajectory_id: str
    node_count: int
    edge_count: int
    chunk_size: int
    schema_version: int
    content_hash: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_graph(
    g: KnowledgeGraph, path: str | Path, chunks: Iterable[ChunkGraph] | None = None
) -> StoredGraphManifest:
    body = {"schema_version": SCHEMA_VERSION, **graph_to_wire(g)}
    if chunks is not None:
        body["chunks"] = [chunk_to_wire(c) for c in chunks]
    manifest = StoredGraphManifest(
        trajectory_id=g.trajectory_id,
        node_count=len(g),
        edge_count=len(g.edges),
        chunk_size=g.chunk_size,
        schema_version=SCHEMA_VERSION,
        content_hash=content_hash(body),
    )
    doc = {"manifest": manifest.to_dict(), "graph": body}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n")
    return manifest


def _read_document(path: str | Path) -> tuple[dict, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest, body = doc["manifest"], doc["graph"]
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: not a graph file ({exc})") from None
    version = body.get("schema_version") if isinstance(body, dict) else None
    if version != SCHEMA_VERSION or manifest.get("schema_version") != SCHEMA_VERSION:
        raise UnsupportedVersion(f"{path}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    if content_hash(body) != manifest.get("content_hash"):
        raise CorruptFile(f"{path}: content hash mismatch")
    return manifest, body


def load_graph(path: str | Path) -> KnowledgeGraph:
    _, body = _read_document(path)
    try:
        g = graph_from_wire(body)
        g.check_invariants()
    except (TourGraphError, KeyError, TypeError, ValueError, AssertionError) as exc:
        raise CorruptFile(f"{path}: invalid graph content ({exc})") from None
    return g


def load_chunk_graphs(path: str | Path) -> list[ChunkGraph]:
    _, body = _read_document(path)
    traj = body["meta"]["trajectory_id"]
    try:
        return [chunk_from_wire(c, traj) for c in body.get("chunks", [])]
    except (TourGraphError, KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: invalid chunk content ({exc})") from None


def read_manifest(path: str | Path) -> StoredGraphManifest:
    manifest, _ = _read_document(path)
    return StoredGraphManifest(**manifest)


# -- retrieval -----------------------------------------------------------------

MATCH_ALL = "*"
ATTRIBUTE_FIELDS = ("color", "material", "size", "affordance")


@dataclass(frozen=True)
class RetrievalCriteria:
    entity_terms: tuple[str, ...] = ()
    predicate_terms: tuple[str, ...] = ()
    attribute_filters: Mapping[str, str] = field(default_factory=dict)
    frame_window: tuple[int, int | None] | None = None
    hop_depth: int = 1
    max_nodes: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "entity_terms", tuple(t.strip().lower() for t in self.entity_terms if t.strip()))
        object.__setattr__(self, "predicate_terms", tuple(self.predicate_terms))
        filters = {k: str(v).lower() for k, v in dict(self.attribute_filters).items()}
        for k in filters:
            if k not in ATTRIBUTE_FIELDS:
                raise InvalidArgument(f"unknown attribute filter {k!r}; expected one of {ATTRIBUTE_FIELDS}")
        object.__setattr__(self, "attribute_filters", filters)
        if self.max_nodes < 1:
            raise InvalidArgument("max_nodes must be >= 1")
        if self.hop_depth < 0:
            raise InvalidArgument("hop_depth must be >= 0")

    @classmethod
    def everything(cls) -> RetrievalCriteria:
        return cls(entity_terms=(MATCH_ALL,), hop_depth=0, max_nodes=sys.maxsize)


class SearchIndex:
    """Inverted token index over labels and descriptions of one graph snapshot."""

    def __init__(self, g: KnowledgeGraph):
        self.tokens: dict[str, set[str]] = {}
        self.label_tokens: dict[str, list[str]] = {}
        self.desc_tokens: dict[str, list[str]] = {}
        for node in g.nodes.values():
            lt, dt = tokenize(node.label), tokenize(node.description)
            self.label_tokens[node.id] = lt
            self.desc_tokens[node.id] = dt
            for tok in set(lt) | set(dt):
                self.tokens.setdefault(tok, set()).add(node.id)

    def candidates(self, phrase_tokens: list[str]) -> set[str]:
        sets = [self.tokens.get(t) for t in phrase_tokens]
        if not sets or any(s is None for s in sets):
            return set()
        sets.sort(key=len)
        out = set(sets[0])
        for s in sets[1:]:
            out &= s
        return out

    def phrase_hits(self, phrase: str) -> set[str]:
        toks = phrase.split()
        return {
            nid
            for nid in self.candidates(toks)
            if contains_phrase(self.label_tokens[nid], toks) or contains_phrase(self.desc_tokens[nid], toks)
        }


def search_index(g: KnowledgeGraph) -> SearchIndex:
    idx = g._cache.get("search")
    if idx is None:
        idx = g._cache["search"] = SearchIndex(g)
    return idx


def _attribute_hits(g: KnowledgeGraph, idx: SearchIndex, field_: str, term: str, lex: Lexicon) -> set[str]:
    hits: set[str] = set()
    for variant in lex.variants(term):
        for nid in idx.candidates(variant.split()):
            node = g.node(nid)
            if (
                (field_ == "color" and variant in node.color)
                or (field_ == "material" and node.material == variant)
                or (field_ == "size" and node.size == variant)
                or (field_ == "affordance" and variant in node.affordances)
            ):
                hits.add(nid)
    return hits


def seed_scores(g: KnowledgeGraph, c: RetrievalCriteria, lex: Lexicon | None = None) -> dict[str, int]:
    """Nodes matching any entity term or attribute filter, with the number of criteria they meet."""
    lex = lex or _lexicon()
    if MATCH_ALL in c.entity_terms:
        return {nid: 1 for nid in g.nodes}
    idx = search_index(g)
    scores: dict[str, int] = {}
    for term in c.entity_terms:
        hits: set[str] = set()
        for variant in lex.variants(term):
            hits |= idx.phrase_hits(variant)
        for nid in hits:
            scores[nid] = scores.get(nid, 0) + 1
    for field_, term in c.attribute_filters.items():
        for nid in _attribute_hits(g, idx, field_, term, lex):
            scores[nid] = scores.get(nid, 0) + 1
    if c.predicate_terms:
        wanted = {normalize_predicate(p) for p in c.predicate_terms}
        for nid in scores:
            if any(r.predicate in wanted for r in g.incident_edges(nid)):
                scores[nid] += 1
    return scores


def _in_window(node: ObjectDescriptor, window: tuple[int, int | None]) -> bool:
    lo, hi = window
    hi = hi if hi is not None else sys.maxsize
    idx = node.frame_indices
    pos = bisect.bisect_left(idx, lo)
    return pos < len(idx) and idx[pos] <= hi


def retrieve_subgraph(
    g: KnowledgeGraph, c: RetrievalCriteria, lex: Lexicon | None = None
) -> KnowledgeGraph:
    """Seed on matching nodes, expand ``hop_depth`` hops, filter by window, cap at ``max_nodes``.

    Cost is driven by the number of matching and expanded nodes, not by |V|,
    once the snapshot's search index exists.
    """
    seeds = seed_scores(g, c, lex)
    dist = hop_distances(g, seeds, c.hop_depth)
    ids: Iterable[str] = dist
    if c.frame_window is not None:
        ids = [nid for nid in dist if _in_window(g.node(nid), c.frame_window)]

    def order(nid: str):
        return (0 if nid in seeds else 1, -seeds.get(nid, 0), dist[nid], g.node(nid).first_frame, nid)

    if c.max_nodes >= len(dist):
        keep = sorted(ids, key=order)
    else:
        keep = heapq.nsmallest(c.max_nodes, ids, key=order)
    return induced_subgraph(g, keep)


_LEX: list[Lexicon] = []


def _lexicon() -> Lexicon:
    if not _LEX:
        _LEX.append(default_lexicon())
    return _LEX[0]
