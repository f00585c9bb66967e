"""Graph-retrieval question answering over a knowledge graph.

Three modes share one pipeline (decompose, retrieve, reason, rank frames):

* ``R``   reason over the subgraph retrieved for the query,
* ``F``   reason over the whole graph (guarded by the backend context limit),
* ``CWR`` run ``R`` on each chunk graph in turn, stopping at the first chunk
  whose reasoning reports the question resolved.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .backends import Backend, canonical_json, estimate_tokens, parse_json_reply
from .errors import BackendError, ContextOverflow, InvalidArgument, SchemaInvalid
from .graph import ChunkGraph, KnowledgeGraph, chunk_to_graph
from .lexicon import Lexicon, default_lexicon, tokenize
from .prompts import load_template, render
from .store import RetrievalCriteria, graph_to_wire, relation_to_wire, retrieve_subgraph

log = logging.getLogger(__name__)

QTYPES = ("object_search", "scene_description", "spatial_relation", "action_place")
MODES = ("R", "F", "CWR")
CONFIDENCE = ("none", "partial", "resolved")
DEFAULT_K_MAX = 5
NOT_FOUND = "not found"

PLAN_SCHEMA = json.dumps(
    {
        "entities": ["string"],
        "relations": [["subject or ?", "predicate", "object or ?"]],
        "attributes": {"color": "string", "material": "string", "size": "string"},
        "affordances": ["string"],
        "temporal": "[first_frame, last_frame] or null",
    }
)
REPLY_SCHEMA = json.dumps(
    {
        "answer": "string",
        "option": "option label or null",
        "object_ids_ranked": ["node id"],
        "relevance": ["float in [0,1], one per id (optional)"],
        "confidence": "resolved|partial|none",
    }
)


@dataclass(frozen=True)
class Query:
    text: str
    qtype: str | None = None
    options: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise InvalidArgument("query text is empty")
        if self.qtype is not None and self.qtype not in QTYPES:
            raise InvalidArgument(f"unknown question type {self.qtype!r}")
        options = dict(self.options or {})
        if options and len(options) < 2:
            raise InvalidArgument("a multiple-choice query needs at least two options")
        object.__setattr__(self, "options", options)

    @property
    def token_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class QueryPlan:
    entities: tuple[str, ...] = ()
    relations: tuple[tuple[str, str, str], ...] = ()
    attributes: Mapping[str, str] = field(default_factory=dict)
    affordances: tuple[str, ...] = ()
    temporal: tuple[int, int | None] | None = None
    raw_terms: tuple[str, ...] = ()
    fallback: bool = False

    @property
    def unstructured(self) -> bool:
        return not self.entities and not self.relations

    @property
    def entity_terms(self) -> list[str]:
        if self.unstructured:
            return list(self.raw_terms)
        terms = list(self.entities)
        for s, _, o in self.relations:
            terms.extend(t for t in (s, o) if t != "?")
        return list(dict.fromkeys(terms))

    def criteria(self, max_nodes: int = 50, hop_depth: int = 1) -> RetrievalCriteria:
        filters = dict(self.attributes)
        if self.affordances:
            filters["affordance"] = self.affordances[0]
        return RetrievalCriteria(
            entity_terms=tuple(self.entity_terms),
            predicate_terms=tuple(p for _, p, _ in self.relations),
            attribute_filters=filters,
            frame_window=self.temporal,
            hop_depth=hop_depth,
            max_nodes=max_nodes,
        )

    def to_dict(self) -> dict:
        return {
            "entities": list(self.entities),
            "entity_terms": self.entity_terms,
            "relations": [list(r) for r in self.relations],
            "attributes": dict(self.attributes),
            "affordances": list(self.affordances),
            "temporal": list(self.temporal) if self.temporal else None,
            "unstructured": self.unstructured,
            "fallback": self.fallback,
        }


@dataclass
class Explanation:
    plan: QueryPlan
    subgraph: KnowledgeGraph | None = None
    reply: dict | None = None
    trace: list[str] = field(default_factory=list)
    chunk_index: int | None = None

    def to_dict(self) -> dict:
        sub = graph_to_wire(self.subgraph) if self.subgraph is not None else {"nodes": [], "edges": []}
        return {
            "plan": self.plan.to_dict(),
            "subgraph": {"nodes": sub["nodes"], "edges": sub["edges"]},
            "reply": self.reply,
            "trace": list(self.trace),
            "chunk_index": self.chunk_index,
        }


@dataclass
class QueryResult:
    answer_text: str
    chosen_option: str | None
    ranked_frames: list[int]
    explanation: Explanation
    mode: str
    confidence: str = "none"
    latency_ms: float = 0.0
    degraded: bool = False
    unresolved: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self, with_latency: bool = True) -> dict:
        out = {
            "answer_text": self.answer_text,
            "chosen_option": self.chosen_option,
            "ranked_frames": list(self.ranked_frames),
            "mode": self.mode,
            "confidence": self.confidence,
            "degraded": self.degraded,
            "unresolved": self.unresolved,
            "warnings": list(self.warnings),
            "explanation": self.explanation.to_dict(),
        }
        if with_latency:
            out["latency_ms"] = self.latency_ms
        return out


# -- decomposition -------------------------------------------------------------

def _raw_terms(text: str, lex: Lexicon) -> tuple[str, ...]:
    terms = tuple(dict.fromkeys(t for t in tokenize(text) if not lex.is_stopword(t)))
    return terms or (text.strip(),)


def unstructured_plan(q: Query, lex: Lexicon | None = None, fallback: bool = False) -> QueryPlan:
    return QueryPlan(raw_terms=_raw_terms(q.text, lex or default_lexicon()), fallback=fallback)


def _plan_from_reply(data: Any, q: Query, lex: Lexicon) -> QueryPlan:
    if not isinstance(data, dict):
        raise SchemaInvalid("decomposition reply must be a JSON object")
    entities = tuple(dict.fromkeys(str(e).strip().lower() for e in data.get("entities") or [] if str(e).strip()))
    relations = []
    for rel in data.get("relations") or []:
        if not isinstance(rel, (list, tuple)) or len(rel) != 3:
            raise SchemaInvalid(f"relation pattern {rel!r} is not a triple")
        s, p, o = (str(x).strip().lower() for x in rel)
        relations.append((s or "?", p.replace(" ", "_"), o or "?"))
    attributes = {
        k: str(v).lower() for k, v in (data.get("attributes") or {}).items() if k in ("color", "material", "size") and v
    }
    affordances = tuple(str(a).lower() for a in data.get("affordances") or [])
    temporal = data.get("temporal")
    window = None
    if temporal:
        lo, hi = temporal
        window = (int(lo or 1), int(hi) if hi is not None else None)
    return QueryPlan(
        entities=entities,
        relations=tuple(relations),
        attributes=attributes,
        affordances=affordances,
        temporal=window,
        raw_terms=_raw_terms(q.text, lex),
    )


def decompose_query(q: Query, backend: Backend, lex: Lexicon | None = None) -> QueryPlan:
    lex = lex or default_lexicon()
    prompt = render(load_template("decompose.v1"), query=q.text, schema=PLAN_SCHEMA)
    try:
        raw = backend.complete_text(prompt, op="decompose", payload={"text": q.text})
        return _plan_from_reply(parse_json_reply(raw), q, lex)
    except (BackendError, SchemaInvalid, TypeError, ValueError) as exc:
        log.warning("query decomposition failed (%s); using the raw text", exc)
        return unstructured_plan(q, lex, fallback=True)


# -- ranking -------------------------------------------------------------------

def rank_frames(scored: Iterable[tuple[float, Iterable[int]]], k_max: int = DEFAULT_K_MAX) -> list[int]:
    """Order frames by (object relevance desc, frame asc); each frame kept at its best rank."""
    if k_max < 0:
        raise InvalidArgument("k_max must be >= 0")
    pairs = sorted((-float(rel), int(f)) for rel, frames in scored for f in frames)
    out: list[int] = []
    if k_max == 0:
        return out
    seen: set[int] = set()
    for _, f in pairs:
        if f not in seen:
            seen.add(f)
            out.append(f)
            if len(out) == k_max:
                break
    return out


# -- reasoning -----------------------------------------------------------------

def _graph_context(g: KnowledgeGraph) -> dict:
    nodes = []
    for o in g.nodes.values():
        nodes.append(
            {
                "id": o.id,
                "label": o.label,
                "color": list(o.color),
                "material": o.material,
                "size": o.size,
                "affordances": list(o.affordances),
                "frames": o.frame_indices,
                "description": o.description,
            }
        )
    edges = [{**relation_to_wire(r), "frames": r.frame_indices} for r in g.edges]
    return {"nodes": nodes, "edges": edges}


def _options_block(q: Query) -> str:
    if not q.options:
        return ""
    return "Options:\n" + "\n".join(f"{k}) {v}" for k, v in q.options.items()) + "\n"


def reasoning_prompt(g: KnowledgeGraph, q: Query) -> tuple[str, dict]:
    ctx = _graph_context(g)
    prompt = render(
        load_template("reason.v1"),
        query=q.text,
        options=_options_block(q),
        graph=canonical_json(ctx),
        schema=REPLY_SCHEMA,
    )
    return prompt, ctx


def _reason(g: KnowledgeGraph, q: Query, plan: QueryPlan, backend: Backend, guard: bool = False) -> dict:
    prompt, ctx = reasoning_prompt(g, q)
    if guard:
        tokens = estimate_tokens(prompt)
        if tokens > backend.context_limit:
            raise ContextOverflow(tokens, backend.context_limit)
    payload = {
        "question": q.text,
        "qtype": q.qtype,
        "options": dict(q.options) or None,
        "plan": plan.to_dict(),
        "graph": ctx,
    }
    raw = backend.complete_text(prompt, op="reason", payload=payload)
    data = parse_json_reply(raw)
    if not isinstance(data, dict) or not isinstance(data.get("object_ids_ranked", []), list):
        raise SchemaInvalid("reasoning reply must be an object with an object_ids_ranked list", raw=raw)
    if data.get("confidence") not in CONFIDENCE:
        data["confidence"] = "partial" if data.get("object_ids_ranked") else "none"
    return data


def _result_from_reply(
    g: KnowledgeGraph, q: Query, plan: QueryPlan, reply: dict, mode: str, k_max: int, explanation: Explanation
) -> QueryResult:
    warnings: list[str] = []
    ids = [str(i) for i in reply.get("object_ids_ranked") or []]
    relevance = reply.get("relevance")
    if not isinstance(relevance, list) or len(relevance) != len(ids):
        relevance = [(len(ids) - i) / len(ids) for i in range(len(ids))]
    scored = []
    for nid, rel in zip(ids, relevance):
        if nid not in g:
            warnings.append(f"reasoning named unknown object id {nid!r}; dropped")
            continue
        frames = g.node(nid).frame_indices
        if g.total_frames:
            frames = [f for f in frames if f <= g.total_frames]
        scored.append((min(1.0, max(0.0, float(rel))), frames))
    chosen = reply.get("option")
    if chosen is not None and chosen not in q.options:
        warnings.append(f"reasoning chose option {chosen!r} which is not offered; ignored")
        chosen = None
    answer = reply.get("answer") or (q.options.get(chosen) if chosen else None) or NOT_FOUND
    return QueryResult(
        answer_text=str(answer),
        chosen_option=chosen,
        ranked_frames=rank_frames(scored, k_max),
        explanation=explanation,
        mode=mode,
        confidence=reply["confidence"],
        degraded=bool(warnings),
        warnings=warnings,
    )


def _not_found(plan: QueryPlan, mode: str, explanation: Explanation) -> QueryResult:
    return QueryResult(NOT_FOUND, None, [], explanation, mode, confidence="none")


def _run(
    g: KnowledgeGraph,
    q: Query,
    plan: QueryPlan,
    backend: Backend,
    k_max: int,
    mode: str,
    retrieve: bool,
    max_nodes: int,
    hop_depth: int,
    lex: Lexicon,
    chunk_index: int | None = None,
) -> QueryResult:
    if retrieve:
        sub = retrieve_subgraph(g, plan.criteria(max_nodes, hop_depth), lex)
    else:
        sub = g
    explanation = Explanation(plan=plan, subgraph=sub, chunk_index=chunk_index)
    explanation.trace.append(
        f"{'retrieved' if retrieve else 'full graph'}: {len(sub)} nodes, {len(sub.edges)} edges"
        + (f" (chunk {chunk_index})" if chunk_index is not None else "")
    )
    if len(sub) == 0:
        return _not_found(plan, mode, explanation)
    reply = _reason(sub, q, plan, backend, guard=not retrieve)
    explanation.reply = reply
    explanation.trace.append(f"reasoning confidence: {reply['confidence']}")
    return _result_from_reply(sub, q, plan, reply, mode, k_max, explanation)


def answer_retrieval(
    g: KnowledgeGraph,
    q: Query,
    backend: Backend,
    k_max: int = DEFAULT_K_MAX,
    *,
    max_nodes: int = 50,
    hop_depth: int = 1,
    lexicon: Lexicon | None = None,
) -> QueryResult:
    start = time.perf_counter()
    lex = lexicon or default_lexicon()
    plan = decompose_query(q, backend, lex)
    res = _run(g, q, plan, backend, k_max, "R", True, max_nodes, hop_depth, lex)
    res.latency_ms = (time.perf_counter() - start) * 1000.0
    return res


def answer_full(
    g: KnowledgeGraph,
    q: Query,
    backend: Backend,
    k_max: int = DEFAULT_K_MAX,
    *,
    lexicon: Lexicon | None = None,
    **_: Any,
) -> QueryResult:
    start = time.perf_counter()
    lex = lexicon or default_lexicon()
    plan = decompose_query(q, backend, lex)
    res = _run(g, q, plan, backend, k_max, "F", False, 0, 0, lex)
    res.latency_ms = (time.perf_counter() - start) * 1000.0
    return res


def answer_chunkwise(
    chunk_graphs: Sequence[ChunkGraph | KnowledgeGraph],
    q: Query,
    backend: Backend,
    k_max: int = DEFAULT_K_MAX,
    *,
    trajectory_id: str = "trajectory",
    total_frames: int = 0,
    max_nodes: int = 50,
    hop_depth: int = 1,
    lexicon: Lexicon | None = None,
) -> QueryResult:
    start = time.perf_counter()
    lex = lexicon or default_lexicon()
    plan = decompose_query(q, backend, lex)
    best: QueryResult | None = None
    trace: list[str] = []
    last_k = -1
    for item in chunk_graphs:
        if isinstance(item, ChunkGraph):
            k = item.chunk_index
            g = chunk_to_graph(item, trajectory_id, total_frames)
        else:
            k, g = item.last_chunk_applied, item
        if k < last_k:
            raise InvalidArgument("chunk graphs must be ordered by chunk index")
        last_k = k
        res = _run(g, q, plan, backend, k_max, "CWR", True, max_nodes, hop_depth, lex, chunk_index=k)
        trace.extend(res.explanation.trace)
        if res.confidence == "resolved":
            best = res
            break
        if best is None or CONFIDENCE.index(res.confidence) > CONFIDENCE.index(best.confidence):
            best = res
        trace.append(f"chunk {k} unresolved; propagating")
    if best is None:
        best = _not_found(plan, "CWR", Explanation(plan=plan))
    if best.confidence != "resolved":
        best.unresolved = True
    best.explanation.trace = trace
    best.latency_ms = (time.perf_counter() - start) * 1000.0
    return best


def answer(
    mode: str,
    q: Query,
    backend: Backend,
    *,
    graph: KnowledgeGraph | None = None,
    chunks: Sequence[ChunkGraph] | None = None,
    k_max: int = DEFAULT_K_MAX,
    lexicon: Lexicon | None = None,
    max_nodes: int = 50,
) -> QueryResult:
    """Dispatch on ``mode``; CWR needs the chunk graphs, the other modes the full graph."""
    if mode == "R":
        return answer_retrieval(graph, q, backend, k_max, max_nodes=max_nodes, lexicon=lexicon)
    if mode == "F":
        return answer_full(graph, q, backend, k_max, lexicon=lexicon)
    if mode == "CWR":
        if chunks is None:
            raise InvalidArgument("chunk-wise mode needs the chunk graphs saved with the graph")
        return answer_chunkwise(
            chunks,
            q,
            backend,
            k_max,
            trajectory_id=graph.trajectory_id if graph is not None else "trajectory",
            total_frames=graph.total_frames if graph is not None else 0,
            max_nodes=max_nodes,
            lexicon=lexicon,
        )
    raise InvalidArgument(f"mode must be one of {MODES}, got {mode!r}")
