from __future__ import annotations

from .app import create_app, goal_response
from .schemas import GoalResponse, Pose, QueryRequest

__all__ = ["GoalResponse", "Pose", "QueryRequest", "create_app", "goal_response"]
