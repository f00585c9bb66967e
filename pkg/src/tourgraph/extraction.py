"""Chunking of the tour video and per-chunk graph extraction."""

from __future__ import annotations

import json
import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .backends import Backend, parse_json_reply
from .errors import ChunkExtractionError, InvalidArgument, SchemaInvalid, TourGraphError
from .graph import SIZES, BoundingBox, ChunkGraph, FrameRef, ObjectDescriptor, SpatialRelation, normalize_predicate
from .prompts import load_template, render

log = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 8
DEFAULT_TEMPLATE = "chunk_graph.v1"

CHUNK_WIRE_SCHEMA = json.dumps(
    {
        "objects": [
            {
                "id": "string, unique per physical object",
                "label": "string",
                "color": ["string"],
                "material": "string",
                "size": "small|medium|large|unknown",
                "affordances": ["string"],
                "frames": ["int"],
                "bboxes": [{"frame": "int", "x": "float", "y": "float", "w": "float", "h": "float"}],
            }
        ],
        "relations": [
            {"subject_id": "string", "predicate": "lower_snake string", "object_id": "string", "frames": ["int"]}
        ],
    },
    indent=1,
)


@dataclass(frozen=True)
class ChunkSpec:
    chunk_index: int
    frames: tuple[int, ...]
    chunk_size: int

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not 1 <= len(frames) <= self.chunk_size:
            raise InvalidArgument(f"chunk {self.chunk_index} has {len(frames)} frames, limit {self.chunk_size}")
        if any(b != a + 1 for a, b in zip(frames, frames[1:])):
            raise InvalidArgument(f"chunk {self.chunk_index} frames are not consecutive")

    @property
    def frame_range(self) -> tuple[int, int]:
        return (self.frames[0], self.frames[-1])


def partition_frames(total_frames: int, chunk_size: int = DEFAULT_CHUNK_SIZE, include_tail: bool = True) -> list[ChunkSpec]:
    """Split frames 1..T into consecutive chunks of ``chunk_size``.

    Without the tail this yields exactly floor(T/b) full chunks (indices
    0..floor(T/b)-1) and drops the remainder; with it, a final shorter chunk
    holds the T mod b leftover frames.
    """
    if isinstance(chunk_size, bool) or not isinstance(chunk_size, int) or chunk_size < 1:
        raise InvalidArgument(f"chunk size must be >= 1, got {chunk_size!r}")
    if total_frames < 0:
        raise InvalidArgument(f"total_frames must be >= 0, got {total_frames!r}")
    last_full = total_frames // chunk_size - 1
    specs = [
        ChunkSpec(k, tuple(range(k * chunk_size + 1, (k + 1) * chunk_size + 1)), chunk_size)
        for k in range(last_full + 1)
    ]
    rest = total_frames % chunk_size
    if include_tail and rest:
        k = last_full + 1
        specs.append(ChunkSpec(k, tuple(range(k * chunk_size + 1, total_frames + 1)), chunk_size))
    return specs


@dataclass(frozen=True)
class ExtractionRequest:
    chunk: ChunkSpec
    images: tuple[str, ...]
    trajectory_id: str
    prompt_template_id: str = DEFAULT_TEMPLATE
    frame_sizes: Mapping[int, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        if len(self.images) != len(self.chunk.frames):
            raise InvalidArgument(
                f"chunk {self.chunk.chunk_index}: {len(self.images)} images for {len(self.chunk.frames)} frames"
            )

    @property
    def payload(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "chunk_index": self.chunk.chunk_index,
            "frames": list(self.chunk.frames),
        }


def render_chunk_prompt(req: ExtractionRequest) -> str:
    return render(
        load_template(req.prompt_template_id),
        k=req.chunk.chunk_index,
        n_frames=len(req.chunk.frames),
        frame_list=", ".join(str(f) for f in req.chunk.frames),
        schema=CHUNK_WIRE_SCHEMA,
    )


def _frames(values: Any, allowed: set[int], where: str) -> list[int]:
    if not isinstance(values, list) or not values:
        raise SchemaInvalid(f"{where}: frames must be a non-empty list")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise SchemaInvalid(f"{where}: frame {v!r} is not an integer")
        v = int(v)
        if v not in allowed:
            raise SchemaInvalid(f"{where}: frame {v} is outside the chunk")
        if v not in out:
            out.append(v)
    return sorted(out)


def parse_chunk_reply(raw: str, req: ExtractionRequest) -> ChunkGraph:
    """Validate a backend reply and rename its ids into the chunk namespace ``c{k}:{n}``."""
    k = req.chunk.chunk_index
    data = parse_json_reply(raw)
    try:
        return _build_chunk(data, req)
    except SchemaInvalid as exc:
        exc.raw = raw
        raise
    except (InvalidArgument, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SchemaInvalid(f"chunk {k}: {type(exc).__name__}: {exc}", raw=raw) from None


def _build_chunk(data: Any, req: ExtractionRequest) -> ChunkGraph:
    k = req.chunk.chunk_index
    if not isinstance(data, dict) or not isinstance(data.get("objects", []), list):
        raise SchemaInvalid(f"chunk {k}: reply must be an object with an 'objects' list")
    allowed = set(req.chunk.frames)

    def ref(i: int) -> FrameRef:
        w, h = req.frame_sizes.get(i, (None, None))
        return FrameRef(req.trajectory_id, i, w, h)

    id_map: dict[str, str] = {}
    objects = []
    for n, raw_obj in enumerate(data.get("objects") or []):
        src_id = str(raw_obj["id"])
        if src_id in id_map:
            raise SchemaInvalid(f"chunk {k}: object id {src_id!r} repeated")
        local = f"c{k}:{n}"
        id_map[src_id] = local
        frames = _frames(raw_obj.get("frames"), allowed, f"chunk {k} object {src_id!r}")
        size = str(raw_obj.get("size") or "unknown").strip().lower()
        color = raw_obj.get("color") or []
        boxes = []
        for bb in raw_obj.get("bboxes") or []:
            f = _frames([bb["frame"]], set(frames), f"chunk {k} object {src_id!r} bbox")[0]
            boxes.append(BoundingBox(float(bb["x"]), float(bb["y"]), float(bb["w"]), float(bb["h"]), ref(f)))
        objects.append(
            ObjectDescriptor(
                id=local,
                label=str(raw_obj["label"]),
                frames=tuple(ref(f) for f in frames),
                color=(color,) if isinstance(color, str) else tuple(str(c) for c in color),
                material=str(raw_obj.get("material") or ""),
                size=size if size in SIZES else "unknown",
                bboxes=tuple(boxes),
                affordances=tuple(str(a) for a in raw_obj.get("affordances") or ()),
                provenance=(k,),
            )
        )
    relations: dict[tuple, SpatialRelation] = {}
    for raw_rel in data.get("relations") or []:
        s, o = str(raw_rel["subject_id"]), str(raw_rel["object_id"])
        if s not in id_map or o not in id_map:
            raise SchemaInvalid(f"chunk {k}: relation {s!r} -> {o!r} names an unknown object")
        frames = _frames(raw_rel.get("frames"), allowed, f"chunk {k} relation {s!r}->{o!r}")
        rel = SpatialRelation(id_map[s], normalize_predicate(str(raw_rel["predicate"])), id_map[o], tuple(ref(f) for f in frames))
        if rel.key in relations:
            prev = relations[rel.key]
            rel = SpatialRelation(rel.subject_id, rel.predicate, rel.object_id, prev.frames + rel.frames)
        relations[rel.key] = rel
    return ChunkGraph(k, req.chunk.frame_range, tuple(objects), tuple(relations.values()))


def extract_chunk_graph(req: ExtractionRequest, backend: Backend) -> ChunkGraph:
    raw = backend.complete_multimodal(render_chunk_prompt(req), req.images, op="extract", payload=req.payload)
    return parse_chunk_reply(raw, req)


@dataclass
class FrameManifest:
    """Frame dump of one tour video: frame i (1-based) lives at ``frames[i-1]``."""

    trajectory_id: str
    frames: list[str]
    sizes: list[tuple[int, int] | None] = field(default_factory=list)
    source: str | None = None

    @property
    def total_frames(self) -> int:
        return len(self.frames)

    def image(self, index: int) -> str:
        return self.frames[index - 1]

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "total_frames": self.total_frames,
            "source": self.source,
            "frames": [
                {"index": i + 1, "path": p, **({"width": s[0], "height": s[1]} if s else {})}
                for i, (p, s) in enumerate(zip(self.frames, self.sizes or [None] * len(self.frames)))
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FrameManifest:
        rows = sorted(d["frames"], key=lambda r: r["index"])
        if [r["index"] for r in rows] != list(range(1, len(rows) + 1)):
            raise SchemaInvalid("frame manifest indices must be 1..T without gaps")
        sizes = [(r["width"], r["height"]) if "width" in r else None for r in rows]
        return cls(str(d["trajectory_id"]), [r["path"] for r in rows], sizes, d.get("source"))

    @classmethod
    def load(cls, path: str | Path) -> FrameManifest:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def frame_sizes(self) -> dict[int, tuple[int, int]]:
        return {i + 1: s for i, s in enumerate(self.sizes) if s}


@dataclass
class ExtractionConfig:
    chunk_size: int = DEFAULT_CHUNK_SIZE
    include_tail: bool = True
    parallelism: int = 1
    on_error: str = "halt"
    template_id: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        if self.on_error not in ("halt", "skip"):
            raise InvalidArgument(f"on_error must be 'halt' or 'skip', got {self.on_error!r}")
        if self.parallelism < 1:
            raise InvalidArgument("parallelism must be >= 1")


def build_requests(video: FrameManifest, config: ExtractionConfig) -> list[ExtractionRequest]:
    sizes = video.frame_sizes()
    return [
        ExtractionRequest(
            chunk=spec,
            images=tuple(video.image(i) for i in spec.frames),
            trajectory_id=video.trajectory_id,
            prompt_template_id=config.template_id,
            frame_sizes={i: sizes[i] for i in spec.frames if i in sizes},
        )
        for spec in partition_frames(video.total_frames, config.chunk_size, config.include_tail)
    ]


def extract_all(
    video: FrameManifest,
    backend: Backend,
    config: ExtractionConfig | None = None,
    warnings: list[str] | None = None,
) -> Iterator[ChunkGraph]:
    """Yield chunk graphs in ascending chunk order.

    Up to ``config.parallelism`` chunks are in flight at once; results are
    released strictly in order. A failing chunk either ends the stream with
    :class:`ChunkExtractionError` (``halt``) or is logged and skipped.
    """
    config = config or ExtractionConfig()
    requests = build_requests(video, config)
    pending: deque[tuple[ExtractionRequest, Future]] = deque()
    todo = iter(requests)
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:

        def top_up() -> None:
            while len(pending) < config.parallelism:
                req = next(todo, None)
                if req is None:
                    return
                pending.append((req, pool.submit(extract_chunk_graph, req, backend)))

        top_up()
        while pending:
            req, fut = pending.popleft()
            try:
                chunk = fut.result()
            except TourGraphError as exc:
                err = ChunkExtractionError(req.chunk.chunk_index, exc)
                if config.on_error == "skip":
                    log.warning("skipping %s", err)
                    if warnings is not None:
                        warnings.append(str(err))
                    top_up()
                    continue
                for _, other in pending:
                    other.cancel()
                raise err from exc
            top_up()
            yield chunk
