"""Seeded generator for desk-scale benchmarks.

Produces, under ``out_dir``::

    fixtures/scenes/<traj>.json   scene scripts for the mock backend
    fixtures/lexicon.json         labels and verbs used by the scenes
    manifests/<traj>.json         frame manifests (image paths are placeholders)
    benchmarks/<traj>.json        questions in the benchmark file format
    poses/<traj>.csv              frame,x,y,yaw

Scenes are built so each question has exactly one correct answer: labels are
unique per trajectory, every affordance verb belongs to one label, and each
object takes part in at most one spatial relation.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from ..graph import FrameRef, KnowledgeGraph, ObjectDescriptor, SpatialRelation, from_parts
from .questions import Benchmark, BenchmarkQuestion, write_benchmark

# label -> affordance verb ("" for none); single-word labels sharing no tokens
VOCAB = {
    "chair": "sit",
    "bed": "sleep",
    "sink": "wash",
    "stove": "cook",
    "kettle": "boil",
    "bookshelf": "read",
    "whiteboard": "write",
    "fridge": "store",
    "printer": "print",
    "microwave": "heat",
    "television": "watch",
    "fountain": "drink",
    "kiosk": "buy",
    "stairs": "climb",
    "door": "open",
    "lamp": "",
    "plant": "",
    "clock": "",
    "painting": "",
    "vase": "",
    "mirror": "",
    "cabinet": "",
}
COLORS = ["red", "blue", "green", "white", "black", "yellow", "brown", "gray", "orange", "purple"]
MATERIALS = ["wood", "metal", "plastic", "glass", "fabric", "leather", "ceramic", "stone"]
SIZES = ["small", "medium", "large"]
PREDICATE_PHRASES = {
    "left_of": "to the left of",
    "right_of": "to the right of",
    "near": "next to",
    "behind": "behind",
    "in_front_of": "in front of",
    "above": "above",
    "below": "under",
}
QTYPE_CYCLE = ("object_search", "scene_description", "spatial_relation", "action_place")


@dataclass
class SyntheticBenchmark:
    root: Path
    fixture_dir: Path
    manifests: list[Path] = field(default_factory=list)
    benchmarks: list[Path] = field(default_factory=list)
    poses: list[Path] = field(default_factory=list)
    questions: list[BenchmarkQuestion] = field(default_factory=list)


def _intervals(rng: random.Random, total: int, count: int) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for _ in range(50):
        if len(out) == count:
            break
        length = rng.randint(4, 14)
        lo = rng.randint(1, total - length + 1)
        hi = lo + length - 1
        if all(hi + 3 < a or lo > b + 3 for a, b in out):
            out.append((lo, hi))
    return sorted(out)


def _frames(intervals: list[tuple[int, int]]) -> list[int]:
    return sorted({f for lo, hi in intervals for f in range(lo, hi + 1)})


def _runs(frames: list[int]) -> list[tuple[int, int]]:
    runs: list[tuple[int, int]] = []
    for f in frames:
        if runs and runs[-1][1] == f - 1:
            runs[-1] = (runs[-1][0], f)
        else:
            runs.append((f, f))
    return runs


def make_scene(rng: random.Random, trajectory_id: str, total_frames: int, n_objects: int, n_relations: int) -> dict:
    labels = rng.sample(sorted(VOCAB), n_objects)
    objects = []
    for i, label in enumerate(labels):
        ivs = _intervals(rng, total_frames, rng.choice((1, 2)))
        x, y = round(rng.uniform(0.0, 0.6), 3), round(rng.uniform(0.0, 0.6), 3)
        objects.append(
            {
                "key": f"{label}-{i}",
                "label": label,
                "color": [rng.choice(COLORS)],
                "material": rng.choice(MATERIALS),
                "size": rng.choice(SIZES),
                "affordances": [VOCAB[label]] if VOCAB[label] else [],
                "intervals": ivs,
                "bbox": [x, y, round(rng.uniform(0.1, 0.35), 3), round(rng.uniform(0.1, 0.35), 3)],
            }
        )
    relations = []
    for r in range(n_relations):
        a, b = objects[2 * r], objects[2 * r + 1]
        # re-place b so it overlaps a's first sighting by a few frames
        lo, hi = a["intervals"][0]
        shift = rng.randint(-(hi - lo) // 2, (hi - lo) // 2)
        length = rng.randint(4, 12)
        blo = max(1, min(total_frames - length + 1, lo + shift))
        b["intervals"] = [(blo, blo + length - 1)]
        shared = sorted(set(_frames(a["intervals"])) & set(_frames(b["intervals"])))
        if not shared:
            b["intervals"] = [(lo, min(total_frames, lo + length - 1))]
            shared = sorted(set(_frames(a["intervals"])) & set(_frames(b["intervals"])))
        relations.append(
            {"subject": a["key"], "predicate": rng.choice(sorted(PREDICATE_PHRASES)), "object": b["key"], "frames": shared}
        )
    for o in objects:
        o["frames"] = _frames(o.pop("intervals"))
    return {"trajectory_id": trajectory_id, "total_frames": total_frames, "objects": objects, "relations": relations}


def _options(rng: random.Random, correct: str, pool: list[str]) -> tuple[dict[str, str], str]:
    distractors = rng.sample([p for p in pool if p != correct], 3)
    choices = distractors + [correct]
    rng.shuffle(choices)
    labels = "ABCD"
    options = {labels[i]: c for i, c in enumerate(choices)}
    return options, labels[choices.index(correct)]


def make_questions(rng: random.Random, scene: dict, n: int) -> list[BenchmarkQuestion]:
    traj = scene["trajectory_id"]
    objs = {o["key"]: o for o in scene["objects"]}
    by_type = {
        "object_search": list(scene["objects"]),
        "scene_description": list(scene["objects"]),
        "spatial_relation": list(scene["relations"]),
        "action_place": [o for o in scene["objects"] if o["affordances"]],
    }
    for pool in by_type.values():
        rng.shuffle(pool)
    out: list[BenchmarkQuestion] = []
    cycle = 0
    while len(out) < n:
        qtype = QTYPE_CYCLE[cycle % len(QTYPE_CYCLE)]
        cycle += 1
        pool = by_type[qtype]
        if not pool:
            qtype, pool = "object_search", by_type["object_search"] or list(scene["objects"])
        item = pool.pop() if len(pool) > 1 or qtype == "object_search" and len(pool) else pool[0]
        qid = f"{traj}-q{len(out) + 1:02d}"
        options: dict[str, str] = {}
        correct = None
        if qtype == "object_search":
            o = item
            text = f"Where is the {o['color'][0]} {o['label']}?"
        elif qtype == "scene_description":
            o = item
            if rng.random() < 0.5:
                text = f"What color is the {o['label']}?"
                options, correct = _options(rng, o["color"][0], COLORS)
            else:
                text = f"What is the {o['label']} made of?"
                options, correct = _options(rng, o["material"], MATERIALS)
        elif qtype == "spatial_relation":
            rel = item
            o = objs[rel["subject"]]
            target = objs[rel["object"]]
            text = f"What is {PREDICATE_PHRASES[rel['predicate']]} the {target['label']}?"
            others = [x["label"] for x in scene["objects"] if x["key"] not in (rel["subject"], rel["object"])]
            options, correct = _options(rng, o["label"], others + [o["label"]])
        else:
            o = item
            text = f"Where can I {o['affordances'][0]}?"
        out.append(
            BenchmarkQuestion(
                id=qid,
                trajectory_id=traj,
                text=text,
                qtype=qtype,
                gt_intervals=tuple(_runs(o["frames"])),
                options=options,
                correct=correct,
            )
        )
    return out


def _poses_csv(total_frames: int, phase: float) -> str:
    lines = ["frame,x,y,yaw"]
    for t in range(1, total_frames + 1):
        x = 0.1 * t
        y = math.sin(t / 10.0 + phase)
        yaw = math.atan2(0.1 * math.cos(t / 10.0 + phase), 0.1)
        lines.append(f"{t},{x:.4f},{y:.4f},{yaw:.6f}")
    return "\n".join(lines) + "\n"


def _dump(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def generate_synthetic_benchmark(
    seed: int,
    out_dir: str | Path,
    n_trajectories: int = 3,
    questions_per_trajectory: int = 10,
    chunks_per_trajectory: int = 12,
    chunk_size: int = 8,
    objects_per_trajectory: int = 10,
    relations_per_trajectory: int = 3,
) -> SyntheticBenchmark:
    if objects_per_trajectory > len(VOCAB) or 2 * relations_per_trajectory > objects_per_trajectory:
        raise ValueError("not enough distinct objects for the requested scene")
    rng = random.Random(seed)
    root = Path(out_dir)
    fixture_dir = root / "fixtures"
    result = SyntheticBenchmark(root=root, fixture_dir=fixture_dir)
    total = chunks_per_trajectory * chunk_size
    for t in range(n_trajectories):
        traj = f"synth-{seed}-{t}"
        scene = make_scene(rng, traj, total, objects_per_trajectory, relations_per_trajectory)
        questions = make_questions(rng, scene, questions_per_trajectory)
        _dump(fixture_dir / "scenes" / f"{traj}.json", scene)
        manifest = root / "manifests" / f"{traj}.json"
        _dump(
            manifest,
            {
                "trajectory_id": traj,
                "total_frames": total,
                "source": "synthetic",
                "frames": [{"index": i, "path": f"../frames/{traj}/{i:06d}.png"} for i in range(1, total + 1)],
            },
        )
        bench_path = root / "benchmarks" / f"{traj}.json"
        bench_path.parent.mkdir(parents=True, exist_ok=True)
        write_benchmark(Benchmark(traj, total, tuple(questions)), bench_path)
        pose_path = root / "poses" / f"{traj}.csv"
        pose_path.parent.mkdir(parents=True, exist_ok=True)
        pose_path.write_text(_poses_csv(total, phase=float(t)), encoding="utf-8")
        result.manifests.append(manifest)
        result.benchmarks.append(bench_path)
        result.poses.append(pose_path)
        result.questions.extend(questions)
    _dump(fixture_dir / "lexicon.json", {"entities": sorted(VOCAB)})
    return result


FILLER_LABELS = ("chair", "table", "sofa", "lamp", "plant", "cabinet", "window", "shelf", "box", "bench")
TARGET_LABEL = "fire extinguisher"


def make_large_graph(n_nodes: int, seed: int = 0, frames_per_node: int = 3, degree: int = 2) -> KnowledgeGraph:
    """A tour-sized graph for scaling checks.

    Exactly one node is labelled ``fire extinguisher`` whatever ``n_nodes`` is,
    so fixed criteria select the same seed set at every size. Filler nodes are
    spread along the tour and linked to a few earlier nodes.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    rng = random.Random(seed)
    total = max(8, n_nodes * 2)
    target = rng.randrange(n_nodes)
    nodes = []
    for i in range(n_nodes):
        label = TARGET_LABEL if i == target else FILLER_LABELS[i % len(FILLER_LABELS)]
        start = min(total - frames_per_node + 1, 1 + (i * total) // n_nodes)
        nodes.append(
            ObjectDescriptor(
                id=f"g:{i}",
                label=label,
                frames=tuple(FrameRef("large", f) for f in range(start, start + frames_per_node)),
                color=(rng.choice(COLORS),),
                material=rng.choice(MATERIALS),
                size=rng.choice(SIZES),
            )
        )
    edges = {}
    for i in range(1, n_nodes):
        for _ in range(degree):
            j = max(0, i - rng.randint(1, 5))
            pred = rng.choice(("near", "left_of", "behind"))
            f = nodes[i].frames[0]
            edges[(f"g:{i}", pred, f"g:{j}")] = SpatialRelation(f"g:{i}", pred, f"g:{j}", (f,))
    g = from_parts("large", total, 8, nodes, edges.values())
    g.last_chunk_applied = (total - 1) // 8
    g.next_serial = n_nodes
    return g
