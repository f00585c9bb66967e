"""Deterministic stand-ins for the LLM reasoning steps used by the mock backend.

Decomposition is lexicon-driven phrase spotting; reasoning scores the nodes
of the supplied subgraph against the plan and reads answers off the best
scoring node.
"""

from __future__ import annotations

import re
from typing import Any

from ..lexicon import Lexicon, contains_phrase, tokenize

_BETWEEN = re.compile(r"between frames? (\d+) and (\d+)")
_AFTER = re.compile(r"after frame (\d+)")
_BEFORE = re.compile(r"before frame (\d+)")


def _spot(tokens: list[str], phrases: list[str]) -> list[tuple[int, int, str]]:
    """Greedy longest-match phrase spotting; returns (start, end, phrase) spans."""
    by_len = sorted({p for p in phrases if p}, key=lambda p: (-len(p.split()), p))
    taken = [False] * len(tokens)
    spans: list[tuple[int, int, str]] = []
    for phrase in by_len:
        ptoks = phrase.split()
        n = len(ptoks)
        for i in range(len(tokens) - n + 1):
            if tokens[i : i + n] == ptoks and not any(taken[i : i + n]):
                spans.append((i, i + n, phrase))
                for j in range(i, i + n):
                    taken[j] = True
    return sorted(spans)


def decompose_text(text: str, lex: Lexicon) -> dict[str, Any]:
    tokens = tokenize(text)
    joined = " ".join(tokens)

    entity_phrases = list(lex.entities)
    for group in lex.synonyms:
        entity_phrases.extend(group)
    pred_spans = _spot(tokens, list(lex.predicates))
    pred_cover = {i for s, e, _ in pred_spans for i in range(s, e)}
    ent_spans = [
        sp for sp in _spot(tokens, entity_phrases) if not any(i in pred_cover for i in range(sp[0], sp[1]))
    ]
    entities = list(dict.fromkeys(p for _, _, p in ent_spans))

    relations = []
    for ps, pe, phrase in pred_spans:
        before = [p for s, e, p in ent_spans if e <= ps]
        after = [p for s, e, p in ent_spans if s >= pe]
        subj = before[-1] if before else "?"
        obj = after[0] if after else "?"
        if subj == "?" and obj == "?":
            continue
        relations.append([subj, lex.predicates[phrase], obj])

    attributes: dict[str, str] = {}
    for tok in tokens:
        if tok in lex.colors:
            attributes.setdefault("color", tok)
        elif tok in lex.materials:
            attributes.setdefault("material", tok)
        elif tok in lex.sizes:
            attributes.setdefault("size", tok)

    affordances = list(dict.fromkeys(lex.affordances[p] for _, _, p in _spot(tokens, list(lex.affordances))))

    temporal = None
    if m := _BETWEEN.search(joined):
        lo, hi = sorted((int(m.group(1)), int(m.group(2))))
        temporal = [lo, hi]
    elif m := _AFTER.search(joined):
        temporal = [int(m.group(1)) + 1, None]
    elif m := _BEFORE.search(joined):
        temporal = [1, max(1, int(m.group(1)) - 1)]

    return {
        "entities": entities,
        "relations": relations,
        "attributes": attributes,
        "affordances": affordances,
        "temporal": temporal,
    }


def _term_score(term: str, label_toks: list[str], desc_toks: list[str], lex: Lexicon) -> int:
    best = 0
    for variant in lex.variants(term):
        vt = variant.split()
        if contains_phrase(label_toks, vt):
            return 2
        if contains_phrase(desc_toks, vt):
            best = 1
    return best


def _label_matches(term: str, label: str, lex: Lexicon) -> bool:
    toks = tokenize(label)
    return any(contains_phrase(toks, v.split()) for v in lex.variants(term))


def reason(payload: dict[str, Any], lex: Lexicon) -> dict[str, Any]:
    plan = payload.get("plan") or {}
    options: dict[str, str] = payload.get("options") or {}
    graph = payload.get("graph") or {}
    nodes = {n["id"]: n for n in graph.get("nodes", [])}
    edges = graph.get("edges", [])

    relations = plan.get("relations") or []
    rel_endpoints = {t for rel in relations for t in (rel[0], rel[2]) if t != "?"}
    terms = [t for t in plan.get("entity_terms") or plan.get("entities") or [] if t not in rel_endpoints]
    attrs: dict[str, str] = plan.get("attributes") or {}
    affords = plan.get("affordances") or []

    info: dict[str, dict[str, Any]] = {}
    for nid, n in nodes.items():
        label_toks = tokenize(n["label"])
        desc_toks = tokenize(n.get("description", ""))
        target = sum(_term_score(t, label_toks, desc_toks, lex) for t in terms)
        target += sum(2 for a in affords if a in n.get("affordances", []))
        score = target
        score += sum(_term_score(t, label_toks, desc_toks, lex) for t in rel_endpoints)
        for field_, value in attrs.items():
            if field_ == "color" and value in n.get("color", []):
                score += 1
            elif field_ == "affordance" and value in n.get("affordances", []):
                score += 1
            elif field_ in ("material", "size") and n.get(field_) == value:
                score += 1
        frames = n.get("frames") or [0]
        first = min(f if isinstance(f, int) else f["index"] for f in frames)
        info[nid] = {"score": score, "target": target, "first": first, "tokens": set(label_toks) | set(desc_toks)}

    satisfied = False
    inverse = lex.inverse_predicates
    for subj, pred, obj in relations:
        for e in edges:
            s_id, p, o_id = e["subject_id"], e["predicate"], e["object_id"]
            if s_id not in nodes or o_id not in nodes:
                continue
            # read each edge forwards and, when the predicate has an inverse, backwards
            readings = []
            if p == pred:
                readings.append((s_id, o_id))
            if inverse.get(p) == pred:
                readings.append((o_id, s_id))
            for a, b in readings:
                a_ok = subj == "?" or _label_matches(subj, nodes[a]["label"], lex)
                b_ok = obj == "?" or _label_matches(obj, nodes[b]["label"], lex)
                if not (a_ok and b_ok):
                    continue
                answer = a if subj == "?" else b if obj == "?" else a
                info[answer]["score"] += 3
                info[answer]["target"] += 3
                satisfied = True

    ranked = sorted(
        (nid for nid, v in info.items() if v["score"] > 0),
        key=lambda nid: (-info[nid]["score"], info[nid]["first"], nid),
    )
    top = info[ranked[0]]["score"] if ranked else 1
    relevance = [round(info[nid]["score"] / top, 6) for nid in ranked]

    chosen = None
    if options and ranked:
        opt_toks = {
            label: {t for t in tokenize(text) if not lex.is_stopword(t)} for label, text in options.items()
        }
        for nid in ranked:
            overlap = {label: len(toks & info[nid]["tokens"]) for label, toks in opt_toks.items()}
            best = max(overlap.values())
            winners = [label for label, v in overlap.items() if v == best]
            if best > 0 and len(winners) == 1:
                chosen = winners[0]
                break

    scripted = payload.get("scripted") or {}
    if scripted.get("option") in options:
        chosen = scripted["option"]

    if not ranked:
        confidence = "none"
    else:
        grounded = satisfied if relations else info[ranked[0]]["target"] > 0
        if grounded and (not options or chosen is not None):
            confidence = "resolved"
        else:
            confidence = "partial"

    if chosen is not None:
        answer = options[chosen]
    elif ranked:
        answer = nodes[ranked[0]].get("description") or nodes[ranked[0]]["label"]
    else:
        answer = "not found"
    return {
        "answer": answer,
        "option": chosen,
        "object_ids_ranked": ranked,
        "relevance": relevance,
        "confidence": confidence,
    }
