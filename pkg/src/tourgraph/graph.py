"""Knowledge-graph domain types and the pure operations on them.

Graphs are treated as immutable snapshots: every public operation returns a
new :class:`KnowledgeGraph` and leaves its input untouched. The private
``_put_*``/``_remove_*`` helpers mutate in place and are only ever applied to
a fresh copy.
"""

from __future__ import annotations

import enum
import math
import re
from collections import deque
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import Conflict, InvalidArgument, NotFound

SIZES = ("small", "medium", "large", "unknown")
BBOX_SLACK = 1e-6

EdgeKey = tuple[str, str, str]


@dataclass(frozen=True, slots=True)
class FrameRef:
    trajectory_id: str
    index: int
    width_px: int | None = None
    height_px: int | None = None

    def __post_init__(self) -> None:
        if isinstance(self.index, bool) or not isinstance(self.index, int) or self.index < 1:
            raise InvalidArgument(f"frame index must be an integer >= 1, got {self.index!r}")
        for dim in (self.width_px, self.height_px):
            if dim is not None and dim <= 0:
                raise InvalidArgument(f"frame dimensions must be positive, got {dim!r}")


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Box in fractions of the frame size, top-left anchored."""

    x: float
    y: float
    w: float
    h: float
    frame: FrameRef

    def __post_init__(self) -> None:
        ok = (
            0.0 <= self.x <= 1.0
            and 0.0 <= self.y <= 1.0
            and self.w > 0.0
            and self.h > 0.0
            and self.x + self.w <= 1.0 + BBOX_SLACK
            and self.y + self.h <= 1.0 + BBOX_SLACK
        )
        if not ok:
            raise InvalidArgument(
                f"bounding box out of range: x={self.x} y={self.y} w={self.w} h={self.h}"
            )


def normalize_predicate(text: str) -> str:
    out = re.sub(r"[\s\-]+", "_", text.strip().lower())
    if not out:
        raise InvalidArgument("relation predicate is empty")
    return out


def render_description(
    label: str,
    color: Sequence[str] = (),
    material: str = "",
    size: str = "unknown",
    affordances: Sequence[str] = (),
) -> str:
    head = [w for w in (size if size != "unknown" else "", " ".join(color), label) if w]
    parts = [" ".join(head)]
    if material:
        parts.append(f"material {material}")
    if affordances:
        parts.append("affords " + ", ".join(affordances))
    return re.sub(r"\s+", " ", ", ".join(parts).lower()).strip()


def _clean_words(values: Iterable[str]) -> tuple[str, ...]:
    out: list[str] = []
    for v in values:
        v = re.sub(r"\s+", " ", str(v).strip().lower())
        if v and v not in out:
            out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class ObjectDescriptor:
    id: str
    label: str
    frames: tuple[FrameRef, ...]
    color: tuple[str, ...] = ()
    material: str = ""
    size: str = "unknown"
    bboxes: tuple[BoundingBox, ...] = ()
    affordances: tuple[str, ...] = ()
    relationships: tuple[str, ...] = ()
    provenance: tuple[int, ...] = ()
    description: str = field(init=False, compare=False)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        if not self.id:
            raise InvalidArgument("object id is empty")
        label = re.sub(r"\s+", " ", str(self.label).strip().lower())
        if not label:
            raise InvalidArgument(f"object {self.id!r} has an empty label")
        set_(self, "label", label)
        if isinstance(self.color, str):
            set_(self, "color", (self.color,))
        set_(self, "color", _clean_words(self.color))
        set_(self, "affordances", _clean_words(self.affordances))
        set_(self, "material", re.sub(r"\s+", " ", str(self.material or "").strip().lower()))
        size = str(self.size or "unknown").strip().lower()
        if size not in SIZES:
            raise InvalidArgument(f"object {self.id!r}: size must be one of {SIZES}, got {size!r}")
        set_(self, "size", size)

        frames = tuple(sorted(self.frames, key=lambda f: f.index))
        for a, b in zip(frames, frames[1:]):
            if a.index == b.index:
                raise InvalidArgument(f"object {self.id!r} lists frame {a.index} twice")
        set_(self, "frames", frames)
        indices = {f.index for f in frames}
        bboxes = tuple(sorted(self.bboxes, key=lambda bb: (bb.frame.index, bb.x, bb.y, bb.w, bb.h)))
        for bb in bboxes:
            if bb.frame.index not in indices:
                raise InvalidArgument(
                    f"object {self.id!r} has a box on frame {bb.frame.index} outside its frames"
                )
        set_(self, "bboxes", bboxes)
        set_(self, "relationships", tuple(self.relationships))
        set_(self, "provenance", tuple(sorted(set(self.provenance))))
        set_(
            self,
            "description",
            render_description(label, self.color, self.material, self.size, self.affordances),
        )

    @property
    def frame_indices(self) -> list[int]:
        return [f.index for f in self.frames]

    @property
    def first_frame(self) -> int:
        return self.frames[0].index if self.frames else 0


@dataclass(frozen=True)
class SpatialRelation:
    subject_id: str
    predicate: str
    object_id: str
    frames: tuple[FrameRef, ...]

    def __post_init__(self) -> None:
        if self.subject_id == self.object_id:
            raise InvalidArgument(f"relation on {self.subject_id!r} is a self-loop")
        object.__setattr__(self, "predicate", normalize_predicate(self.predicate))
        object.__setattr__(self, "frames", _union_frames((), self.frames))
        if not self.frames:
            raise InvalidArgument(f"relation {self.rel_id} has no frame evidence")

    @property
    def key(self) -> EdgeKey:
        return (self.subject_id, self.predicate, self.object_id)

    @property
    def rel_id(self) -> str:
        return f"{self.subject_id}|{self.predicate}|{self.object_id}"

    @property
    def frame_indices(self) -> list[int]:
        return [f.index for f in self.frames]


@dataclass(frozen=True)
class ChunkGraph:
    chunk_index: int
    frame_range: tuple[int, int]
    objects: tuple[ObjectDescriptor, ...] = ()
    relations: tuple[SpatialRelation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_range", tuple(self.frame_range))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "relations", tuple(self.relations))
        lo, hi = self.frame_range
        if self.chunk_index < 0 or lo < 1 or hi < lo:
            raise InvalidArgument(f"bad chunk {self.chunk_index} range {self.frame_range}")
        ids = set()
        for o in self.objects:
            if o.id in ids:
                raise InvalidArgument(f"chunk {self.chunk_index}: duplicate object id {o.id!r}")
            ids.add(o.id)
            if not o.frames:
                raise InvalidArgument(f"chunk {self.chunk_index}: object {o.id!r} has no frames")
            for f in o.frames:
                if not lo <= f.index <= hi:
                    raise InvalidArgument(
                        f"chunk {self.chunk_index}: object {o.id!r} frame {f.index} "
                        f"outside [{lo}, {hi}]"
                    )
        for r in self.relations:
            if r.subject_id not in ids or r.object_id not in ids:
                raise InvalidArgument(f"chunk {self.chunk_index}: relation {r.rel_id} has a dangling endpoint")
            for f in r.frames:
                if not lo <= f.index <= hi:
                    raise InvalidArgument(f"chunk {self.chunk_index}: relation frame {f.index} out of range")


def _union_frames(a: Iterable[FrameRef], b: Iterable[FrameRef]) -> tuple[FrameRef, ...]:
    by_index: dict[int, FrameRef] = {}
    for f in list(a) + list(b):
        by_index.setdefault(f.index, f)
    return tuple(by_index[i] for i in sorted(by_index))


class MergePolicy(str, enum.Enum):
    PREFER_RICHER = "prefer-richer"
    KEEP_FIRST = "keep-first"


def _reconcile(kept, dropped, unknown, keep_n: int, drop_n: int, policy: MergePolicy):
    if kept == unknown:
        return dropped
    if policy is MergePolicy.KEEP_FIRST or dropped == unknown or dropped == kept:
        return kept
    return dropped if drop_n > keep_n else kept


def merge_descriptors(
    keep: ObjectDescriptor,
    drop: ObjectDescriptor,
    policy: MergePolicy = MergePolicy.PREFER_RICHER,
) -> ObjectDescriptor:
    """Fold ``drop`` into ``keep``: evidence is unioned, attributes reconciled."""
    kn, dn = len(keep.frames), len(drop.frames)
    boxes = {(bb.frame.index, bb.x, bb.y, bb.w, bb.h): bb for bb in keep.bboxes + drop.bboxes}
    return replace(
        keep,
        label=_reconcile(keep.label, drop.label, "", kn, dn, policy),
        color=_reconcile(keep.color, drop.color, (), kn, dn, policy),
        material=_reconcile(keep.material, drop.material, "", kn, dn, policy),
        size=_reconcile(keep.size, drop.size, "unknown", kn, dn, policy),
        frames=_union_frames(keep.frames, drop.frames),
        bboxes=tuple(boxes.values()),
        affordances=keep.affordances + tuple(a for a in drop.affordances if a not in keep.affordances),
        provenance=keep.provenance + drop.provenance,
    )


class KnowledgeGraph:
    """Accumulated object graph for one trajectory.

    ``frame_index`` maps each frame index to the ids of objects seen there and
    is kept as the exact inverse of the node frame sets.
    """

    def __init__(self, trajectory_id: str, total_frames: int = 0, chunk_size: int = 8):
        if isinstance(chunk_size, bool) or not isinstance(chunk_size, int) or chunk_size < 1:
            raise InvalidArgument(f"chunk_size must be >= 1, got {chunk_size!r}")
        if total_frames < 0:
            raise InvalidArgument(f"total_frames must be >= 0, got {total_frames!r}")
        self.trajectory_id = trajectory_id
        self.total_frames = total_frames
        self.chunk_size = chunk_size
        self.last_chunk_applied = -1
        self.next_serial = 0
        self._nodes: dict[str, ObjectDescriptor] = {}
        self._edges: dict[EdgeKey, SpatialRelation] = {}
        self._frame_index: dict[int, set[str]] = {}
        # dict-as-ordered-set keeps traversal order reproducible across processes
        self._incident: dict[str, dict[EdgeKey, None]] = {}
        self._cache: dict = {}

    # -- read API ---------------------------------------------------------
    @property
    def nodes(self) -> Mapping[str, ObjectDescriptor]:
        return MappingProxyType(self._nodes)

    @property
    def edges(self) -> list[SpatialRelation]:
        return list(self._edges.values())

    @property
    def frame_index(self) -> Mapping[int, set[str]]:
        return MappingProxyType(self._frame_index)

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __iter__(self) -> Iterator[ObjectDescriptor]:
        return iter(self._nodes.values())

    def node(self, node_id: str) -> ObjectDescriptor:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise NotFound(f"no object with id {node_id!r}") from None

    def edge(self, key: EdgeKey) -> SpatialRelation | None:
        return self._edges.get(key)

    def incident_edges(self, node_id: str) -> list[SpatialRelation]:
        return [self._edges[k] for k in self._incident.get(node_id, ())]

    def neighbors(self, node_id: str) -> list[str]:
        out: dict[str, None] = {}
        for s, _, o in self._incident.get(node_id, ()):
            out[o if s == node_id else s] = None
        return list(out)

    def objects_at(self, frame: int) -> frozenset[str]:
        return frozenset(self._frame_index.get(frame, ()))

    @property
    def meta(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "total_frames": self.total_frames,
            "chunk_size": self.chunk_size,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.last_chunk_applied == other.last_chunk_applied
            and self.next_serial == other.next_serial
            and self._nodes == other._nodes
            and self._edges == other._edges
            and self._frame_index == other._frame_index
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph({self.trajectory_id!r}, |V|={len(self._nodes)}, "
            f"|E|={len(self._edges)}, k={self.last_chunk_applied})"
        )

    def copy(self) -> KnowledgeGraph:
        g = KnowledgeGraph.__new__(KnowledgeGraph)
        g.trajectory_id = self.trajectory_id
        g.total_frames = self.total_frames
        g.chunk_size = self.chunk_size
        g.last_chunk_applied = self.last_chunk_applied
        g.next_serial = self.next_serial
        g._nodes = dict(self._nodes)
        g._edges = dict(self._edges)
        g._frame_index = {k: set(v) for k, v in self._frame_index.items()}
        g._incident = {k: dict(v) for k, v in self._incident.items()}
        g._cache = {}
        return g

    def empty_like(self) -> KnowledgeGraph:
        g = KnowledgeGraph(self.trajectory_id, self.total_frames, self.chunk_size)
        g.last_chunk_applied = self.last_chunk_applied
        g.next_serial = self.next_serial
        return g

    def rebuild_frame_index(self) -> dict[int, set[str]]:
        index: dict[int, set[str]] = {}
        for node in self._nodes.values():
            for f in node.frames:
                index.setdefault(f.index, set()).add(node.id)
        return index

    def check_invariants(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        assert self.rebuild_frame_index() == self._frame_index, "frame_index out of sync"
        for (s, p, o), rel in self._edges.items():
            assert rel.key == (s, p, o)
            assert s in self._nodes and o in self._nodes, f"dangling edge {rel.rel_id}"
        for node_id, node in self._nodes.items():
            assert node.id == node_id
            assert node.frames, f"{node_id} has no frames"
            expected = tuple(sorted(self._edges[k].rel_id for k in self._incident.get(node_id, ())))
            assert node.relationships == expected, f"{node_id} relationship index stale"

    # -- in-place helpers (only used on private copies) ---------------------
    def _refresh_relationships(self, node_id: str) -> None:
        node = self._nodes[node_id]
        rel_ids = tuple(sorted(self._edges[k].rel_id for k in self._incident.get(node_id, ())))
        if node.relationships != rel_ids:
            self._nodes[node_id] = replace(node, relationships=rel_ids)

    def _put_node(self, node: ObjectDescriptor) -> None:
        old = self._nodes.get(node.id)
        if old is not None:
            for f in old.frames:
                ids = self._frame_index[f.index]
                ids.discard(node.id)
                if not ids:
                    del self._frame_index[f.index]
        self._nodes[node.id] = node
        self._incident.setdefault(node.id, {})
        for f in node.frames:
            self._frame_index.setdefault(f.index, set()).add(node.id)
        self._refresh_relationships(node.id)

    def _remove_node(self, node_id: str) -> None:
        for key in list(self._incident.get(node_id, ())):
            self._remove_edge(key)
        node = self._nodes.pop(node_id)
        self._incident.pop(node_id, None)
        for f in node.frames:
            ids = self._frame_index[f.index]
            ids.discard(node_id)
            if not ids:
                del self._frame_index[f.index]

    def _put_edge(self, rel: SpatialRelation) -> None:
        for end in (rel.subject_id, rel.object_id):
            if end not in self._nodes:
                raise NotFound(f"relation {rel.rel_id}: no object with id {end!r}")
        old = self._edges.get(rel.key)
        if old is not None:
            rel = replace(old, frames=_union_frames(old.frames, rel.frames))
        self._edges[rel.key] = rel
        if old is None:
            self._incident[rel.subject_id][rel.key] = None
            self._incident[rel.object_id][rel.key] = None
            self._refresh_relationships(rel.subject_id)
            self._refresh_relationships(rel.object_id)

    def _remove_edge(self, key: EdgeKey) -> SpatialRelation:
        rel = self._edges.pop(key)
        s, _, o = key
        for end in (s, o):
            self._incident[end].pop(key, None)
            self._refresh_relationships(end)
        return rel


# -- public operations -------------------------------------------------------

def new_graph(trajectory_id: str, total_frames: int, chunk_size: int) -> KnowledgeGraph:
    return KnowledgeGraph(trajectory_id, total_frames, chunk_size)


def from_parts(
    trajectory_id: str,
    total_frames: int,
    chunk_size: int,
    nodes: Iterable[ObjectDescriptor],
    edges: Iterable[SpatialRelation] = (),
    last_chunk_applied: int = -1,
    next_serial: int = 0,
) -> KnowledgeGraph:
    """Bulk constructor; linear in the input size."""
    g = KnowledgeGraph(trajectory_id, total_frames, chunk_size)
    g.last_chunk_applied = last_chunk_applied
    g.next_serial = next_serial
    for node in nodes:
        _check_insertable(g, node)
        g._put_node(node)
    for rel in edges:
        g._put_edge(rel)
    return g


def _check_insertable(g: KnowledgeGraph, o: ObjectDescriptor) -> None:
    if o.id in g._nodes:
        raise Conflict(f"object id {o.id!r} already in graph")
    if not o.frames:
        raise InvalidArgument(f"object {o.id!r} has no frames")


def add_object(g: KnowledgeGraph, o: ObjectDescriptor) -> KnowledgeGraph:
    _check_insertable(g, o)
    out = g.copy()
    out._put_node(replace(o, relationships=()))
    return out


def add_relation(g: KnowledgeGraph, r: SpatialRelation) -> KnowledgeGraph:
    out = g.copy()
    out._put_edge(r)
    return out


def _merge_into(g: KnowledgeGraph, keep_id: str, drop_id: str, policy: MergePolicy) -> None:
    keep, drop = g._nodes[keep_id], g._nodes[drop_id]
    moved = [g._remove_edge(k) for k in list(g._incident.get(drop_id, ()))]
    g._remove_node(drop_id)
    g._put_node(merge_descriptors(keep, drop, policy))
    for rel in moved:
        s = keep_id if rel.subject_id == drop_id else rel.subject_id
        o = keep_id if rel.object_id == drop_id else rel.object_id
        if s == o:
            # an edge between the two merged nodes collapses to nothing
            continue
        g._put_edge(SpatialRelation(s, rel.predicate, o, rel.frames))


def merge_objects(
    g: KnowledgeGraph,
    keep_id: str,
    drop_id: str,
    policy: MergePolicy = MergePolicy.PREFER_RICHER,
) -> KnowledgeGraph:
    if keep_id == drop_id:
        raise InvalidArgument(f"cannot merge {keep_id!r} with itself")
    g.node(keep_id)
    g.node(drop_id)
    out = g.copy()
    _merge_into(out, keep_id, drop_id, policy)
    return out


def frames_of(g: KnowledgeGraph, node_id: str) -> list[int]:
    return g.node(node_id).frame_indices


def hop_distances(g: KnowledgeGraph, seeds: Iterable[str], depth: float) -> dict[str, int]:
    """Breadth-first hop count from the nearest seed, up to ``depth`` hops."""
    dist: dict[str, int] = {}
    queue: deque[str] = deque()
    for s in seeds:
        g.node(s)
        if s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        cur = queue.popleft()
        d = dist[cur]
        if d >= depth:
            continue
        for nb in g.neighbors(cur):
            if nb not in dist:
                dist[nb] = d + 1
                queue.append(nb)
    return dist


def induced_subgraph(g: KnowledgeGraph, node_ids: Iterable[str]) -> KnowledgeGraph:
    """Subgraph on ``node_ids`` with every edge between them; cost tracks the subgraph size."""
    keep = list(dict.fromkeys(node_ids))
    members = set(keep)
    sub = g.empty_like()
    keys: set[EdgeKey] = set()
    for nid in keep:
        sub._put_node(g.node(nid))
        for key in g._incident.get(nid, ()):
            if key[0] in members and key[2] in members:
                keys.add(key)
    for key in sorted(keys):
        sub._put_edge(g._edges[key])
    for nid in keep:
        sub._refresh_relationships(nid)
    return sub


def neighborhood(g: KnowledgeGraph, seed_ids: Iterable[str], depth: float = 1) -> KnowledgeGraph:
    if depth < 0:
        raise InvalidArgument(f"depth must be >= 0, got {depth}")
    return induced_subgraph(g, hop_distances(g, seed_ids, depth))


def chunk_to_graph(chunk: ChunkGraph, trajectory_id: str, total_frames: int = 0, chunk_size: int = 8) -> KnowledgeGraph:
    """View a chunk-local graph as a standalone KnowledgeGraph."""
    g = from_parts(
        trajectory_id,
        max(total_frames, chunk.frame_range[1]),
        chunk_size,
        [replace(o, relationships=()) for o in chunk.objects],
        chunk.relations,
    )
    g.last_chunk_applied = chunk.chunk_index
    return g


UNBOUNDED = math.inf
