"""Command-line entry point.

Exit codes: 0 ok, 2 bad arguments, 3 backend failure, 4 bad or missing data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .association import AssociationStrategy, build_graph, write_audit
from .backends import Backend, BackendProfile, make_backend
from .bench import (
    PredictionRecord,
    evaluate,
    generate_synthetic_benchmark,
    read_benchmark,
    render_report,
    write_predictions,
)
from .errors import BackendError, ContextOverflow, DataError, InvalidArgument, TourGraphError
from .extraction import ExtractionConfig, FrameManifest, extract_all
from .lexicon import Lexicon, default_lexicon
from .query import DEFAULT_K_MAX, MODES, Query, answer
from .store import atomic_write_text, load_chunk_graphs, load_graph, save_graph

log = logging.getLogger("tourgraph")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _unit_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--fixtures", help="fixture directory for the mock backend")
    p.add_argument("--endpoint", help="base URL of a chat-completions API")
    p.add_argument("--model", help="model name for the remote backend")
    p.add_argument("--profile", help="JSON backend profile (overrides the flags above)")
    p.add_argument("--call-log", help="write one JSON line per backend call here")


def _backend(args: argparse.Namespace) -> Backend:
    if args.profile:
        profile = BackendProfile.from_file(args.profile)
    elif args.backend == "mock":
        if not args.fixtures:
            raise InvalidArgument("--backend mock needs --fixtures DIR")
        profile = BackendProfile(kind="mock", fixture_dir=args.fixtures)
    else:
        profile = BackendProfile(kind="remote-http", endpoint=args.endpoint, model=args.model)
    return make_backend(profile)


def _lexicon(backend: Backend) -> Lexicon:
    return getattr(backend, "lexicon", None) or default_lexicon()


def _finish(backend: Backend, args: argparse.Namespace) -> None:
    if getattr(args, "call_log", None):
        backend.write_call_log(args.call_log)


# -- ingest --------------------------------------------------------------------

def _frames_from_dir(src: Path, trajectory_id: str) -> FrameManifest:
    from PIL import Image

    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"{src}: no image frames found")
    sizes = []
    for p in files:
        with Image.open(p) as im:
            sizes.append(im.size)
    return FrameManifest(trajectory_id, [str(p.resolve()) for p in files], sizes, source=str(src.resolve()))


def _frames_from_video(src: Path, out: Path, trajectory_id: str, stride: int) -> FrameManifest:
    try:
        import cv2
    except ImportError:
        raise InvalidArgument("reading video files needs opencv (pip install tourgraph[video])") from None
    cap = cv2.VideoCapture(str(src))
    if not cap.isOpened():
        raise DataError(f"{src}: cannot open video")
    frame_dir = out / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    paths, sizes = [], []
    n = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if n % stride == 0:
            path = frame_dir / f"{len(paths) + 1:06d}.png"
            if not path.exists():
                cv2.imwrite(str(path), frame)
            paths.append(str(path.resolve()))
            sizes.append((frame.shape[1], frame.shape[0]))
        n += 1
    cap.release()
    if not paths:
        raise DataError(f"{src}: video has no frames")
    return FrameManifest(trajectory_id, paths, sizes, source=str(src.resolve()))


def cmd_ingest(args: argparse.Namespace) -> int:
    src = Path(args.source)
    if not src.exists():
        raise InvalidArgument(f"{src}: no such file or directory")
    out = Path(args.out)
    traj = args.trajectory_id or src.stem
    if src.is_dir():
        manifest = _frames_from_dir(src, traj)
    else:
        manifest = _frames_from_video(src, out, traj, args.stride)
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"{path}: {manifest.total_frames} frames for trajectory {traj}")
    return 0


# -- build ---------------------------------------------------------------------

def cmd_build(args: argparse.Namespace) -> int:
    try:
        video = FrameManifest.load(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{args.manifest}: cannot read frame manifest ({exc})") from None
    backend = _backend(args)
    config = ExtractionConfig(
        chunk_size=args.chunk_size,
        include_tail=not args.no_tail,
        parallelism=args.parallelism,
        on_error=args.on_error,
    )
    strategy = AssociationStrategy(kind=args.strategy, tau=args.tau)
    warnings: list[str] = []
    chunks = []
    audit: list = []

    def stream():
        for c in extract_all(video, backend, config, warnings):
            chunks.append(c)
            yield c

    def progress(chunk, g, matched):
        print(
            f"chunk {chunk.chunk_index:>3} frames {chunk.frame_range[0]}-{chunk.frame_range[1]}: "
            f"{len(chunk.objects)} objects, {matched} associated, graph {len(g)} nodes / {len(g.edges)} edges"
        )

    try:
        g = build_graph(
            stream(),
            strategy,
            backend,
            trajectory_id=video.trajectory_id,
            total_frames=video.total_frames,
            chunk_size=args.chunk_size,
            audit=audit,
            on_chunk=progress,
        )
    finally:
        _finish(backend, args)
    manifest = save_graph(g, args.out, chunks=chunks)
    if args.audit:
        write_audit(args.audit, audit)
    merged = sum(d.associated for d in audit)
    print(
        f"association: {len(audit)} candidate pairs scored, {merged} merged (strategy={strategy.kind}, tau={strategy.tau})"
    )
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out}: {manifest.node_count} nodes, {manifest.edge_count} edges, sha256 {manifest.content_hash}")
    return 0


# -- query ---------------------------------------------------------------------

def _parse_options(raw: list[str] | None) -> dict[str, str]:
    options = {}
    for item in raw or []:
        label, sep, text = item.partition("=")
        if not sep or not label.strip() or not text.strip():
            raise InvalidArgument(f"--option expects LABEL=TEXT, got {item!r}")
        options[label.strip()] = text.strip()
    return options


def _print_result(d: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(d, indent=1, sort_keys=True))
        return
    print(f"answer:     {d['answer_text']}")
    if d.get("chosen_option"):
        print(f"option:     {d['chosen_option']}")
    print(f"frames:     {' '.join(map(str, d['ranked_frames'])) or '-'}")
    if "goal_pose" in d:
        pose = d["goal_pose"]
        print("goal pose:  " + ("-" if pose is None else f"x={pose['x']} y={pose['y']} yaw={pose['yaw']}"))
    print(f"confidence: {d.get('confidence', '-')} (mode {d.get('mode', '-')})")
    sub = d.get("explanation", {}).get("subgraph") or {}
    for node in sub.get("nodes", []):
        print(f"  node {node['id']}: {node.get('description') or node.get('label')}")
    for edge in sub.get("edges", []):
        print(f"  edge {edge['subject_id']} {edge['predicate']} {edge['object_id']}")
    for line in d.get("explanation", {}).get("trace", []):
        print(f"  trace: {line}")
    for w in d.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)


def _query_server(args: argparse.Namespace, options: dict[str, str]) -> int:
    import httpx

    body = {"text": args.text, "mode": args.mode, "options": options, "k_max": args.k_max}
    try:
        resp = httpx.post(args.server.rstrip("/") + "/query", json=body, timeout=120.0)
    except httpx.HTTPError as exc:
        raise BackendError(f"cannot reach {args.server}: {exc}") from None
    data = resp.json()
    if resp.status_code != 200:
        print(f"error: {data.get('detail', data)}", file=sys.stderr)
        return {400: 2, 413: 4, 422: 4, 502: 3}.get(resp.status_code, 1)
    _print_result(data, args.json)
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    options = _parse_options(args.option)
    if args.server:
        return _query_server(args, options)
    if not args.graph:
        raise InvalidArgument("query needs --graph PATH or --server URL")
    g = load_graph(args.graph)
    chunks = load_chunk_graphs(args.graph) if args.mode == "CWR" else None
    backend = _backend(args)
    try:
        result = answer(
            args.mode,
            Query(args.text, options=options),
            backend,
            graph=g,
            chunks=chunks,
            k_max=args.k_max,
            lexicon=_lexicon(backend),
        )
    finally:
        _finish(backend, args)
    _print_result(result.to_dict(with_latency=not args.json), args.json)
    return 0


# -- eval ----------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    graphs = {}
    for path in args.graph:
        g = load_graph(path)
        graphs[g.trajectory_id] = (g, path)
    benches = [read_benchmark(p) for p in args.benchmark]
    backend = _backend(args)
    lex = _lexicon(backend)
    preds: list[PredictionRecord] = []
    questions = []
    chunk_cache: dict[str, list] = {}
    try:
        for bench in benches:
            if bench.trajectory_id not in graphs:
                raise DataError(f"no graph given for trajectory {bench.trajectory_id!r}")
            g, path = graphs[bench.trajectory_id]
            if args.mode == "CWR" and bench.trajectory_id not in chunk_cache:
                chunk_cache[bench.trajectory_id] = load_chunk_graphs(path)
            for q in bench.questions:
                questions.append(q)
                try:
                    res = answer(
                        args.mode,
                        Query(q.text, q.qtype, q.options),
                        backend,
                        graph=g,
                        chunks=chunk_cache.get(bench.trajectory_id),
                        k_max=args.k_max,
                        lexicon=lex,
                    )
                except ContextOverflow as exc:
                    print(f"warning: {q.id}: {exc}", file=sys.stderr)
                    preds.append(PredictionRecord(q.id))
                    continue
                preds.append(PredictionRecord(q.id, tuple(res.ranked_frames), res.chosen_option))
    finally:
        _finish(backend, args)
    report = evaluate(preds, questions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, out / "predictions.jsonl")
    doc = {"mode": args.mode, "metrics": report.to_dict()}
    atomic_write_text(out / "report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    text = render_report({args.mode: report})
    atomic_write_text(out / "report.txt", text)
    print(text, end="")
    return 0


# -- serve / synth ---------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .poses import load_poses
    from .service import create_app

    g = load_graph(args.graph)
    chunks = load_chunk_graphs(args.graph)
    poses = load_poses(args.poses) if args.poses else {}
    backend = _backend(args)
    app = create_app(g, backend, poses=poses, chunks=chunks, lexicon=_lexicon(backend))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    result = generate_synthetic_benchmark(
        args.seed, args.out, n_trajectories=args.trajectories, questions_per_trajectory=args.questions
    )
    kinds = Counter(q.qtype for q in result.questions)
    print(f"wrote {len(result.questions)} questions over {len(result.benchmarks)} trajectories to {args.out}")
    for kind, n in sorted(kinds.items()):
        print(f"  {kind}: {n}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tourgraph", description="Tour-video knowledge graphs and navigation queries.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="index a frame directory or dump a video to frames")
    p.add_argument("source")
    p.add_argument("--out", required=True)
    p.add_argument("--trajectory-id")
    p.add_argument("--stride", type=_positive_int, default=1, help="keep every n-th video frame")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="extract chunk graphs and fold them into one graph")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=_positive_int, default=8)
    p.add_argument("--tau", type=_unit_float, default=0.7)
    p.add_argument("--strategy", choices=("semantic", "visual-stub", "none"), default="semantic")
    p.add_argument("--no-tail", action="store_true", help="drop the trailing partial chunk")
    p.add_argument("--parallelism", type=_positive_int, default=1)
    p.add_argument("--on-error", choices=("halt", "skip"), default="halt")
    p.add_argument("--audit", help="write association decisions as JSON lines")
    _add_backend_args(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="answer one question against a graph")
    p.add_argument("text")
    p.add_argument("--graph")
    p.add_argument("--server", help="send the query to a running service instead")
    p.add_argument("--mode", choices=MODES, default="R")
    p.add_argument("--option", action="append", metavar="LABEL=TEXT")
    p.add_argument("--k-max", type=_positive_int, default=DEFAULT_K_MAX)
    p.add_argument("--json", action="store_true")
    _add_backend_args(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run a benchmark and write predictions and metrics")
    p.add_argument("--graph", nargs="+", required=True)
    p.add_argument("--benchmark", nargs="+", required=True)
    p.add_argument("--mode", choices=MODES, default="R")
    p.add_argument("--k-max", type=_positive_int, default=DEFAULT_K_MAX)
    p.add_argument("--out", required=True)
    _add_backend_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve goal poses over HTTP")
    p.add_argument("--graph", required=True)
    p.add_argument("--poses")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=_positive_int, default=8000)
    _add_backend_args(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate a seeded synthetic benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", type=_positive_int, default=3)
    p.add_argument("--questions", type=_positive_int, default=10)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TourGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code != 1 else 4
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
