"""Frame-retrieval and answer metrics.

A frame is relevant when it falls inside any ground-truth interval (closed
on both ends). Recall is counted per interval: the share of a question's
intervals touched by at least one of the top-k frames. Every metric returns
``None`` when it has no questions to average over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .questions import QTYPES, BenchmarkQuestion, PredictionRecord

DEFAULT_KS = (1, 3, 5)

Preds = Mapping[str, PredictionRecord] | Iterable[PredictionRecord]


def is_relevant(frame: int, gt_intervals: Iterable[tuple[int, int]]) -> bool:
    return any(lo <= frame <= hi for lo, hi in gt_intervals)


def _by_id(preds: Preds) -> dict[str, PredictionRecord]:
    if isinstance(preds, Mapping):
        return dict(preds)
    return {p.question_id: p for p in preds}


def _top(preds: dict[str, PredictionRecord], q: BenchmarkQuestion, k: int) -> tuple[int, ...]:
    p = preds.get(q.id)
    return p.ranked_frames[:k] if p else ()


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def retrieval_accuracy_at_k(preds: Preds, questions: Sequence[BenchmarkQuestion], k: int) -> float | None:
    pm = _by_id(preds)
    return _mean(
        [1.0 if any(is_relevant(f, q.gt_intervals) for f in _top(pm, q, k)) else 0.0 for q in questions]
    )


def precision_at_k(preds: Preds, questions: Sequence[BenchmarkQuestion], k: int) -> float | None:
    pm = _by_id(preds)
    # short lists count the missing slots as misses
    return _mean([sum(is_relevant(f, q.gt_intervals) for f in _top(pm, q, k)) / k for q in questions])


def recall_at_k(preds: Preds, questions: Sequence[BenchmarkQuestion], k: int) -> float | None:
    pm = _by_id(preds)
    values = []
    for q in questions:
        top = _top(pm, q, k)
        hit = sum(1 for lo, hi in q.gt_intervals if any(lo <= f <= hi for f in top))
        values.append(hit / len(q.gt_intervals))
    return _mean(values)


def mrr_at_k(preds: Preds, questions: Sequence[BenchmarkQuestion], k: int) -> float | None:
    pm = _by_id(preds)
    values = []
    for q in questions:
        rr = 0.0
        for rank, f in enumerate(_top(pm, q, k), start=1):
            if is_relevant(f, q.gt_intervals):
                rr = 1.0 / rank
                break
        values.append(rr)
    return _mean(values)


def answer_accuracy(preds: Preds, questions: Sequence[BenchmarkQuestion]) -> float | None:
    pm = _by_id(preds)
    values = []
    for q in questions:
        if not q.options:
            continue
        p = pm.get(q.id)
        values.append(1.0 if p is not None and p.chosen_option == q.correct else 0.0)
    return _mean(values)


@dataclass
class MetricReport:
    question_count: int
    ks: tuple[int, ...] = DEFAULT_KS
    retrieval_accuracy: dict[int, float | None] = field(default_factory=dict)
    precision: dict[int, float | None] = field(default_factory=dict)
    recall: dict[int, float | None] = field(default_factory=dict)
    mrr: dict[int, float | None] = field(default_factory=dict)
    answer_accuracy: float | None = None
    answer_count: int = 0
    by_qtype: dict[str, MetricReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "question_count": self.question_count,
            "answer_count": self.answer_count,
            "ks": list(self.ks),
            "retrieval_accuracy": {f"@{k}": v for k, v in self.retrieval_accuracy.items()},
            "precision": {f"@{k}": v for k, v in self.precision.items()},
            "recall": {f"@{k}": v for k, v in self.recall.items()},
            "mrr": {f"@{k}": v for k, v in self.mrr.items()},
            "answer_accuracy": self.answer_accuracy,
        }
        if self.by_qtype:
            out["by_qtype"] = {t: r.to_dict() for t, r in self.by_qtype.items()}
        return out


def _report(preds: dict[str, PredictionRecord], questions: Sequence[BenchmarkQuestion], ks: Sequence[int]) -> MetricReport:
    return MetricReport(
        question_count=len(questions),
        ks=tuple(ks),
        retrieval_accuracy={k: retrieval_accuracy_at_k(preds, questions, k) for k in ks},
        precision={k: precision_at_k(preds, questions, k) for k in ks},
        recall={k: recall_at_k(preds, questions, k) for k in ks},
        mrr={k: mrr_at_k(preds, questions, k) for k in ks},
        answer_accuracy=answer_accuracy(preds, questions),
        answer_count=sum(1 for q in questions if q.options),
    )


def evaluate(preds: Preds, questions: Sequence[BenchmarkQuestion], ks: Sequence[int] = DEFAULT_KS) -> MetricReport:
    pm = _by_id(preds)
    report = _report(pm, questions, ks)
    for qtype in QTYPES:
        subset = [q for q in questions if q.qtype == qtype]
        if subset:
            report.by_qtype[qtype] = _report(pm, subset, ks)
    return report
