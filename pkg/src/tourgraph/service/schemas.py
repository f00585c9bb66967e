from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class QueryRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str = Field(min_length=1)
    mode: Literal["R", "F", "CWR"] = "R"
    options: dict[str, str] = Field(default_factory=dict)
    k_max: int = Field(default=5, ge=1, le=100)


class Pose(BaseModel):
    frame: int
    x: float
    y: float
    yaw: float


class GoalResponse(BaseModel):
    answer_text: str
    chosen_option: Optional[str] = None
    ranked_frames: list[int]
    goal_pose: Optional[Pose] = None
    confidence: str
    mode: str
    warnings: list[str] = Field(default_factory=list)
    explanation: dict[str, Any]


class Health(BaseModel):
    status: str
    trajectory_id: str
    nodes: int
    edges: int
