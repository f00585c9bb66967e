"""Plain-text metric tables: one column per method, plus a per-question-type breakdown."""

from __future__ import annotations

from typing import Mapping

from .metrics import MetricReport

_QTYPE_TITLES = {
    "scene_description": "Scene Description",
    "spatial_relation": "Spatial Relations",
    "object_search": "Object Search",
    "action_place": "Action-Place Assoc.",
}
_QTYPE_ORDER = ("scene_description", "spatial_relation", "object_search", "action_place")


def _pct(v: float | None) -> str:
    return "n/a" if v is None else f"{100.0 * v:.2f}"


def _frac(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def overall_table(reports: Mapping[str, MetricReport]) -> str:
    """Metric rows, one column per method; percentages except MRR."""
    names = list(reports)
    first = next(iter(reports.values()))
    rows: list[tuple[str, list[str]]] = []
    rows.append(("Retrieval Performance (%)", []))
    for k in first.ks:
        rows.append((f"  Retrieval Acc.@{k}", [_pct(r.retrieval_accuracy.get(k)) for r in reports.values()]))
    for k in first.ks:
        rows.append((f"  Recall@{k}", [_pct(r.recall.get(k)) for r in reports.values()]))
    for k in first.ks:
        rows.append((f"  Precision@{k}", [_pct(r.precision.get(k)) for r in reports.values()]))
    rows.append(("Ranking Quality", []))
    for k in first.ks:
        rows.append((f"  MRR@{k}", [_frac(r.mrr.get(k)) for r in reports.values()]))
    rows.append(("Generation Quality (%)", []))
    rows.append(("  Answer Acc.", [_pct(r.answer_accuracy) for r in reports.values()]))

    label_w = max(len("Metric"), *(len(label) for label, _ in rows))
    col_w = max(10, *(len(n) for n in names))
    lines = ["Metric".ljust(label_w) + "".join(n.rjust(col_w + 2) for n in names)]
    lines.append("-" * len(lines[0]))
    for label, cells in rows:
        lines.append((label.ljust(label_w) + "".join(c.rjust(col_w + 2) for c in cells)).rstrip())
    counts = ", ".join(f"{n}: {r.question_count} questions ({r.answer_count} multiple choice)" for n, r in reports.items())
    lines.append("")
    lines.append(counts)
    return "\n".join(lines) + "\n"


def qtype_table(reports: Mapping[str, MetricReport]) -> str:
    """Per question type: MRR@1, R@1, MRR@3, R@3 and answer accuracy where options exist."""
    header_cells: list[str] = []
    spans: list[tuple[str, int]] = []
    for qt in _QTYPE_ORDER:
        cols = ["MRR@1", "R@1", "MRR@3", "R@3"]
        if qt in ("scene_description", "spatial_relation"):
            cols.append("Acc")
        spans.append((_QTYPE_TITLES[qt], len(cols)))
        header_cells.extend(cols)
    method_w = max(len("Method"), *(len(n) for n in reports))
    cell_w = 8
    top = "".ljust(method_w)
    for title, n in spans:
        top += " | " + title.center(n * cell_w)
    sub = "Method".ljust(method_w)
    idx = 0
    for _, n in spans:
        sub += " | " + "".join(c.rjust(cell_w) for c in header_cells[idx : idx + n])
        idx += n
    lines = [top.rstrip(), sub, "-" * len(sub)]
    for name, rep in reports.items():
        line = name.ljust(method_w)
        for qt in _QTYPE_ORDER:
            r = rep.by_qtype.get(qt)
            cells = [
                _frac(r.mrr.get(1)) if r else "n/a",
                _pct(r.recall.get(1)) if r else "n/a",
                _frac(r.mrr.get(3)) if r else "n/a",
                _pct(r.recall.get(3)) if r else "n/a",
            ]
            if qt in ("scene_description", "spatial_relation"):
                cells.append(_pct(r.answer_accuracy) if r else "n/a")
            line += " | " + "".join(c.rjust(cell_w) for c in cells)
        lines.append(line)
    return "\n".join(lines) + "\n"


def render_report(reports: Mapping[str, MetricReport]) -> str:
    return overall_table(reports) + "\n" + qtype_table(reports)

