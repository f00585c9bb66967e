from __future__ import annotations

from .metrics import (
    DEFAULT_KS,
    MetricReport,
    answer_accuracy,
    evaluate,
    is_relevant,
    mrr_at_k,
    precision_at_k,
    recall_at_k,
    retrieval_accuracy_at_k,
)
from .questions import (
    QTYPES,
    Benchmark,
    BenchmarkQuestion,
    PredictionRecord,
    load_benchmark,
    read_benchmark,
    read_predictions,
    write_benchmark,
    write_predictions,
)
from .report import overall_table, qtype_table, render_report
from .synthetic import SyntheticBenchmark, generate_synthetic_benchmark, make_large_graph

__all__ = [
    "DEFAULT_KS",
    "QTYPES",
    "Benchmark",
    "BenchmarkQuestion",
    "MetricReport",
    "PredictionRecord",
    "SyntheticBenchmark",
    "answer_accuracy",
    "evaluate",
    "generate_synthetic_benchmark",
    "is_relevant",
    "make_large_graph",
    "load_benchmark",
    "mrr_at_k",
    "overall_table",
    "precision_at_k",
    "qtype_table",
    "read_benchmark",
    "read_predictions",
    "recall_at_k",
    "render_report",
    "retrieval_accuracy_at_k",
    "write_benchmark",
    "write_predictions",
]
