"""Benchmark and prediction file formats.

Benchmark file, one per trajectory::

    {"trajectory_id": "t1", "total_frames": 120,
     "questions": [{"id": "t1-q1", "text": "...", "qtype": "object_search",
                    "gt_intervals": [[10, 15]], "options": {"A": "...", "B": "..."},
                    "correct": "A"}]}

Predictions are line-delimited JSON records
``{"question_id", "ranked_frames", "chosen_option"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..errors import BenchmarkFormatError

QTYPES = ("object_search", "scene_description", "spatial_relation", "action_place")


@dataclass(frozen=True)
class BenchmarkQuestion:
    id: str
    trajectory_id: str
    text: str
    qtype: str
    gt_intervals: tuple[tuple[int, int], ...]
    options: Mapping[str, str] = field(default_factory=dict)
    correct: str | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id,
            "text": self.text,
            "qtype": self.qtype,
            "gt_intervals": [list(iv) for iv in self.gt_intervals],
        }
        if self.options:
            out["options"] = dict(self.options)
            out["correct"] = self.correct
        return out


@dataclass(frozen=True)
class Benchmark:
    trajectory_id: str
    total_frames: int
    questions: tuple[BenchmarkQuestion, ...]

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "total_frames": self.total_frames,
            "questions": [q.to_dict() for q in self.questions],
        }


@dataclass(frozen=True)
class PredictionRecord:
    question_id: str
    ranked_frames: tuple[int, ...] = ()
    chosen_option: str | None = None

    def __post_init__(self) -> None:
        frames = tuple(int(f) for f in self.ranked_frames)
        if len(set(frames)) != len(frames):
            raise BenchmarkFormatError(f"prediction for {self.question_id!r} repeats a frame")
        object.__setattr__(self, "ranked_frames", frames)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "ranked_frames": list(self.ranked_frames),
            "chosen_option": self.chosen_option,
        }


def _fail(where: str, msg: str) -> BenchmarkFormatError:
    return BenchmarkFormatError(f"{where}: {msg}")


def parse_question(d: Any, trajectory_id: str, total_frames: int, where: str) -> BenchmarkQuestion:
    if not isinstance(d, dict):
        raise _fail(where, "question must be an object")
    qid = d.get("id")
    text = d.get("text")
    if not isinstance(qid, str) or not qid:
        raise _fail(where, "missing question id")
    where = f"{where} ({qid})"
    if not isinstance(text, str) or not text.strip():
        raise _fail(where, "missing question text")
    qtype = d.get("qtype")
    if qtype not in QTYPES:
        raise _fail(where, f"unknown qtype {qtype!r}")
    raw_iv = d.get("gt_intervals")
    if not isinstance(raw_iv, list) or not raw_iv:
        raise _fail(where, "gt_intervals must be a non-empty list")
    intervals = []
    for iv in raw_iv:
        if (
            not isinstance(iv, list)
            or len(iv) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in iv)
        ):
            raise _fail(where, f"interval {iv!r} is not a [lo, hi] integer pair")
        lo, hi = iv
        if lo > hi:
            raise _fail(where, f"interval {iv} has hi < lo")
        if lo < 1 or hi > total_frames:
            raise _fail(where, f"interval {iv} outside frames 1..{total_frames}")
        intervals.append((lo, hi))
    options = d.get("options") or {}
    correct = d.get("correct")
    if options:
        if not isinstance(options, dict) or len(options) < 2:
            raise _fail(where, "options must map at least two labels to answers")
        if correct not in options:
            raise _fail(where, f"correct label {correct!r} is not among the options")
    elif correct is not None:
        raise _fail(where, "correct label given without options")
    return BenchmarkQuestion(
        id=qid,
        trajectory_id=trajectory_id,
        text=text,
        qtype=qtype,
        gt_intervals=tuple(intervals),
        options={str(k): str(v) for k, v in options.items()},
        correct=correct,
    )


def parse_benchmark(doc: Any, where: str = "benchmark") -> Benchmark:
    if not isinstance(doc, dict):
        raise _fail(where, "document must be an object")
    traj = doc.get("trajectory_id")
    total = doc.get("total_frames")
    if not isinstance(traj, str) or not traj:
        raise _fail(where, "missing trajectory_id")
    if not isinstance(total, int) or isinstance(total, bool) or total < 0:
        raise _fail(where, "total_frames must be a non-negative integer")
    raw_qs = doc.get("questions")
    if not isinstance(raw_qs, list):
        raise _fail(where, "questions must be a list")
    questions = [parse_question(q, traj, total, f"{where} question {i}") for i, q in enumerate(raw_qs)]
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        raise _fail(where, "question ids are not unique")
    return Benchmark(traj, total, tuple(questions))


def read_benchmark(path: str | Path) -> Benchmark:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BenchmarkFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_benchmark(doc, str(path))


def load_benchmark(path: str | Path) -> list[BenchmarkQuestion]:
    return list(read_benchmark(path).questions)


def write_benchmark(bench: Benchmark, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bench.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_predictions(preds: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(PredictionRecord(d["question_id"], tuple(d.get("ranked_frames") or ()), d.get("chosen_option")))
            except (ValueError, KeyError, TypeError) as exc:
                raise BenchmarkFormatError(f"{path}:{n}: bad prediction record ({exc})") from None
    return out
