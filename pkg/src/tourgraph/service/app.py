"""HTTP goal endpoint over one loaded, read-only graph."""

from __future__ import annotations

from typing import Mapping, Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..backends import Backend
from ..errors import BackendError, ContextOverflow, DataError, InvalidArgument, TourGraphError
from ..graph import ChunkGraph, KnowledgeGraph
from ..lexicon import Lexicon
from ..poses import PoseRecord
from ..query import Query, answer
from .schemas import GoalResponse, Health, Pose, QueryRequest

_STATUS = ((ContextOverflow, 413), (InvalidArgument, 400), (BackendError, 502), (DataError, 422))


def _status(exc: TourGraphError) -> int:
    for cls, code in _STATUS:
        if isinstance(exc, cls):
            return code
    return 500


def goal_response(result, poses: Mapping[int, PoseRecord] | None) -> GoalResponse:
    warnings = list(result.warnings)
    pose = None
    if result.ranked_frames:
        top = result.ranked_frames[0]
        rec = (poses or {}).get(top)
        if rec is None:
            warnings.append(f"no pose recorded for frame {top}")
        else:
            pose = Pose(**rec.to_dict())
    else:
        warnings.append("no frames ranked; no goal pose")
    return GoalResponse(
        answer_text=result.answer_text,
        chosen_option=result.chosen_option,
        ranked_frames=list(result.ranked_frames),
        goal_pose=pose,
        confidence=result.confidence,
        mode=result.mode,
        warnings=warnings,
        explanation=result.explanation.to_dict(),
    )


def create_app(
    graph: KnowledgeGraph,
    backend: Backend,
    poses: Mapping[int, PoseRecord] | None = None,
    chunks: Sequence[ChunkGraph] | None = None,
    lexicon: Lexicon | None = None,
) -> FastAPI:
    app = FastAPI(title="tourgraph goal service")

    @app.exception_handler(RequestValidationError)
    async def bad_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": exc.errors()})

    @app.exception_handler(TourGraphError)
    async def engine_error(request: Request, exc: TourGraphError):
        return JSONResponse(status_code=_status(exc), content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health(status="ok", trajectory_id=graph.trajectory_id, nodes=len(graph), edges=len(graph.edges))

    # sync handler: FastAPI runs it in its worker pool, the graph is never mutated
    @app.post("/query", response_model=GoalResponse)
    def query(req: QueryRequest) -> GoalResponse:
        q = Query(req.text, options=req.options)
        result = answer(req.mode, q, backend, graph=graph, chunks=chunks, k_max=req.k_max, lexicon=lexicon)
        return goal_response(result, poses)

    return app
