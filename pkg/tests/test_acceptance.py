"""Exit criteria, each reported as one PASS/FAIL line in the terminal summary."""

from __future__ import annotations

import json
import random
import statistics
import time
from collections import Counter

import pytest

import oracles
from conftest import ACCEPTANCE_LINES, KITCHEN, MALFORMED, RECURRING, obj
from tourgraph.association import AssociationStrategy, associate, build_graph, stoa_update
from tourgraph.backends import mock_backend
from tourgraph.bench import (
    BenchmarkQuestion,
    PredictionRecord,
    answer_accuracy,
    evaluate,
    generate_synthetic_benchmark,
    load_benchmark,
    make_large_graph,
    mrr_at_k,
    precision_at_k,
    read_benchmark,
    recall_at_k,
    retrieval_accuracy_at_k,
)
from tourgraph.cli import main
from tourgraph.errors import BenchmarkFormatError, ContextOverflow
from tourgraph.extraction import FrameManifest, extract_all, partition_frames
from tourgraph.graph import ChunkGraph, new_graph
from tourgraph.query import Query, answer, answer_chunkwise, answer_full
from tourgraph.store import RetrievalCriteria, load_graph, retrieve_subgraph, save_graph, search_index

pytestmark = pytest.mark.acceptance


def record(n: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1 -------------------------------------------------------------------------

def _random_instance(rng: random.Random):
    questions, preds = [], []
    for i in range(rng.randint(1, 12)):
        ivs = []
        for _ in range(rng.randint(1, 3)):
            lo = rng.randint(1, 60)
            ivs.append((lo, rng.randint(lo, 64)))
        opts = {"A": "a", "B": "b", "C": "c", "D": "d"} if rng.random() < 0.5 else {}
        correct = rng.choice("ABCD") if opts else None
        questions.append(BenchmarkQuestion(f"q{i}", "t", "text", "object_search", tuple(ivs), opts, correct))
        if rng.random() < 0.9:
            frames = rng.sample(range(1, 65), rng.randint(0, 8))
            preds.append(PredictionRecord(f"q{i}", tuple(frames), rng.choice([None, "A", "B", "C", "D"])))
    return preds, questions


def test_1_metric_oracle_equivalence():
    rng = random.Random(1)
    start = time.perf_counter()
    worst = 0.0
    mismatches = 0
    for _ in range(1000):
        preds, questions = _random_instance(rng)
        by_id = {p.question_id: p for p in preds}
        lists = [list(by_id[q.id].ranked_frames) if q.id in by_id else [] for q in questions]
        gts = [list(q.gt_intervals) for q in questions]
        for k in (1, 3, 5, 10):
            for ours, theirs in (
                (retrieval_accuracy_at_k, oracles.acc_at_k),
                (precision_at_k, oracles.precision_at_k),
                (recall_at_k, oracles.recall_at_k),
                (mrr_at_k, oracles.mrr_at_k),
            ):
                worst = max(worst, abs(ours(preds, questions, k) - theirs(lists, gts, k)))
        a = answer_accuracy(preds, questions)
        b = oracles.answer_acc(
            [by_id[q.id].chosen_option if q.id in by_id else None for q in questions],
            [q.correct if q.options else None for q in questions],
        )
        if (a is None) != (b is None):
            mismatches += 1
        elif a is not None:
            worst = max(worst, abs(a - b))
    elapsed = time.perf_counter() - start
    record(1, "metric oracle equivalence", worst <= 1e-12 and not mismatches and elapsed < 10,
           f"max diff {worst:.1e}, {elapsed:.2f}s")


# -- 2 -------------------------------------------------------------------------

def test_2_partition_law():
    start = time.perf_counter()
    bad = []
    for total in range(0, 101):
        for b in range(1, 17):
            for tail in (False, True):
                specs = partition_frames(total, b, tail)
                frames = [list(s.frames) for s in specs]
                flat = [f for c in frames for f in c]
                ok = (
                    frames == oracles.partition(total, b, tail)
                    and flat == sorted(set(flat))
                    and all(len(c) <= b for c in frames)
                    and [s.chunk_index for s in specs] == list(range(len(specs)))
                )
                if not tail:
                    ok = ok and len(specs) == total // b and set(flat) == set(range(1, b * (total // b) + 1))
                else:
                    ok = ok and flat == list(range(1, total + 1))
                if not ok:
                    bad.append((total, b, tail))
    default_ok = len(partition_frames(64)) == 8
    elapsed = time.perf_counter() - start
    record(2, "chunk partition law", not bad and default_ok and elapsed < 1, f"{len(bad)} violations, {elapsed:.2f}s")


# -- 3 -------------------------------------------------------------------------

LABELS = ("chair", "table", "lamp")


def _random_stream(rng: random.Random, n_chunks: int, b: int = 8) -> list[ChunkGraph]:
    chunks = []
    for k in range(n_chunks):
        lo = k * b + 1
        objs = []
        for i in range(rng.randint(0, 5)):
            frames = sorted(rng.sample(range(lo, lo + b), rng.randint(1, 3)))
            color = rng.choice([(), ("red",), ("blue",)])
            material = rng.choice(["", "wood"])
            objs.append(obj(f"c{k}:{i}", rng.choice(LABELS), frames, color=color, material=material))
        chunks.append(ChunkGraph(k, (lo, lo + b - 1), tuple(objs)))
    return chunks


def _evidence(objects) -> Counter:
    return Counter(f.index for o in objects for f in o.frames)


def test_3_stoa_accounting():
    rng = random.Random(3)
    backend = mock_backend(KITCHEN)
    problems = []
    for s in range(200):
        stream = _random_stream(rng, rng.randint(1, 6))
        g = new_graph("t", 8 * len(stream), 8)
        seen = Counter()
        for chunk in stream:
            counts = []
            for tau in (0.3, 0.5, 0.7, 0.9):
                matches, _ = associate(g, chunk, AssociationStrategy(tau=tau), backend)
                counts.append(len(matches))
            if counts != sorted(counts, reverse=True):
                problems.append((s, chunk.chunk_index, "tau", counts))
            audit: list = []
            nxt = stoa_update(g, chunk, AssociationStrategy(), backend, audit=audit)
            matched = sum(d.associated for d in audit)
            if len(nxt) != len(g) + len(chunk.objects) - matched:
                problems.append((s, chunk.chunk_index, "nodes"))
            seen += _evidence(chunk.objects)
            if _evidence(nxt) != seen:
                problems.append((s, chunk.chunk_index, "evidence"))
            nxt.check_invariants()
            g = nxt
    record(3, "STOA accounting over 200 random streams", not problems, f"{len(problems)} violations")


# -- 4 -------------------------------------------------------------------------

def _acc_at_1(g, chunks, bench, backend) -> float:
    preds = []
    for q in bench.questions:
        res = answer("R", Query(q.text, q.qtype, q.options), backend, graph=g, chunks=chunks)
        preds.append(PredictionRecord(q.id, tuple(res.ranked_frames), res.chosen_option))
    return retrieval_accuracy_at_k(preds, bench.questions, 1)


def test_4_association_ablation_shape():
    backend = mock_backend(RECURRING)
    chunks = list(extract_all(FrameManifest.load(RECURRING / "manifest.json"), backend))
    scene = json.loads((RECURRING / "scenes" / "hallway-loop.json").read_text())
    bench = read_benchmark(RECURRING / "benchmark.json")
    built = {
        kind: build_graph(chunks, AssociationStrategy(kind=kind), backend, trajectory_id="hallway-loop", total_frames=32)
        for kind in ("semantic", "none")
    }
    sem, none = len(built["semantic"]), len(built["none"])
    acc_sem = _acc_at_1(built["semantic"], chunks, bench, backend)
    acc_none = _acc_at_1(built["none"], chunks, bench, backend)
    ok = (
        sem == scene["ground_truth_distinct_objects"]
        and none == sum(len(c.objects) for c in chunks)
        and sem < none
        and acc_sem >= acc_none
    )
    record(4, "association ablation shape", ok,
           f"nodes {sem} vs {none}, Acc@1 {acc_sem:.2f} vs {acc_none:.2f}")


# -- 5 and 7 share one synthetic build ---------------------------------------------

def _synth_pipeline(root, tag: str):
    result = generate_synthetic_benchmark(0, root / f"synth-{tag}")
    graphs = []
    for m in result.manifests:
        out = root / f"graphs-{tag}" / f"{m.stem}.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        assert main(["build", "--manifest", str(m), "--out", str(out), "--fixtures", str(result.fixture_dir)]) == 0
        graphs.append(out)
    ev = root / f"eval-{tag}"
    code = main(
        ["eval", "--graph", *map(str, graphs), "--benchmark", *map(str, result.benchmarks),
         "--fixtures", str(result.fixture_dir), "--out", str(ev)]
    )
    assert code == 0
    return result, graphs, ev


@pytest.fixture(scope="module")
def synth_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    start = time.perf_counter()
    runs = [_synth_pipeline(root, "a"), _synth_pipeline(root, "b")]
    return runs, time.perf_counter() - start


def test_5_end_to_end_determinism(synth_runs, capsys):
    runs, elapsed = synth_runs
    capsys.readouterr()
    (result, _, ev_a), (_, _, ev_b) = runs
    doc = json.loads((ev_a / "report.json").read_text())["metrics"]
    qtypes = {q.qtype for q in result.questions}
    same = all((ev_a / n).read_bytes() == (ev_b / n).read_bytes() for n in ("report.json", "report.txt", "predictions.jsonl"))
    ok = (
        len(result.benchmarks) == 3
        and len(qtypes) == 4
        and doc["retrieval_accuracy"]["@1"] == 1.0
        and doc["answer_accuracy"] == 1.0
        and same
        and elapsed < 60
    )
    record(5, "end-to-end determinism", ok,
           f"{doc['question_count']} questions, Acc@1 {doc['retrieval_accuracy']['@1']:.2%}, "
           f"AnsAcc {doc['answer_accuracy']:.2%}, identical={same}, {elapsed:.1f}s for two runs")


# -- 6 -------------------------------------------------------------------------

def _median_latency(g, criteria, repeats: int = 41) -> float:
    search_index(g)
    retrieve_subgraph(g, criteria)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        retrieve_subgraph(g, criteria)
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def test_6_sublinear_retrieval():
    criteria = RetrievalCriteria(entity_terms=("fire extinguisher",), hop_depth=2, max_nodes=32)
    small, large = make_large_graph(1_000), make_large_graph(10_000)
    sizes = [len(retrieve_subgraph(g, criteria)) for g in (small, large)]
    t_small, t_large = _median_latency(small, criteria), _median_latency(large, criteria)
    ratio = t_large / t_small
    ok = all(0 < n <= criteria.max_nodes for n in sizes) and ratio < 2
    record(6, "sublinear retrieval", ok,
           f"|V_sub| {sizes}, median {t_small * 1e3:.3f}ms vs {t_large * 1e3:.3f}ms, ratio {ratio:.2f}")


# -- 7 -------------------------------------------------------------------------

def test_7_mode_contracts(synth_runs):
    # CWR stops at the first chunk that resolves the goal
    backend = mock_backend(KITCHEN)
    chunks = list(extract_all(FrameManifest.load(KITCHEN / "manifest.json"), backend))
    backend = mock_backend(KITCHEN)
    res = answer_chunkwise(chunks, Query("find the kettle"), backend, trajectory_id="kitchen-tour", total_frames=24)
    cwr_ok = res.explanation.chunk_index == 0 and len(backend.calls("reason")) == 1
    backend = mock_backend(KITCHEN)
    res = answer_chunkwise(chunks, Query("find the piano"), backend, trajectory_id="kitchen-tour", total_frames=24)
    propagated = sum("propagating" in line for line in res.explanation.trace)
    cwr_ok = cwr_ok and res.unresolved and propagated == len(chunks)

    overflow = False
    try:
        answer_full(make_large_graph(10_000), Query("Where is the fire extinguisher?"), mock_backend(KITCHEN, context_limit=32_000))
    except ContextOverflow:
        overflow = True

    result, graphs, _ = synth_runs[0][0]
    backend = mock_backend(result.fixture_dir)
    by_traj = {load_graph(p).trajectory_id: load_graph(p) for p in graphs}
    ungrounded = 0
    total = 0
    for bench_path in result.benchmarks:
        bench = read_benchmark(bench_path)
        g = by_traj[bench.trajectory_id]
        for q in bench.questions:
            res = answer("R", Query(q.text, q.qtype, q.options), backend, graph=g)
            sub_frames = {f for n in res.explanation.subgraph for f in n.frame_indices}
            total += 1
            if not res.ranked_frames or not set(res.ranked_frames) <= sub_frames:
                ungrounded += 1
    ok = cwr_ok and overflow and ungrounded == 0
    record(7, "mode contracts", ok,
           f"CWR early stop={cwr_ok}, F overflow={overflow}, R grounded {total - ungrounded}/{total}")


# -- 8 -------------------------------------------------------------------------

def test_8_round_trips(tmp_path):
    backend = mock_backend(KITCHEN)
    chunks = list(extract_all(FrameManifest.load(KITCHEN / "manifest.json"), backend))
    graphs = [
        build_graph(chunks, AssociationStrategy(), backend, trajectory_id="kitchen-tour", total_frames=24),
        make_large_graph(500, seed=8),
        new_graph("empty", 0, 8),
    ]
    equal = 0
    for i, g in enumerate(graphs):
        save_graph(g, tmp_path / f"g{i}.json")
        equal += load_graph(tmp_path / f"g{i}.json") == g
    files = sorted(MALFORMED.glob("*.json"))
    rejected = 0
    for path in files:
        try:
            load_benchmark(path)
        except BenchmarkFormatError:
            rejected += 1
    ok = equal == len(graphs) and len(files) == 5 and rejected == 5
    record(8, "round-trips", ok, f"graphs {equal}/{len(graphs)}, malformed rejected {rejected}/{len(files)}")
