"""Frame-to-pose table read from a ``frame,x,y,yaw`` CSV file."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

POSE_HEADER = ("frame", "x", "y", "yaw")


def normalize_yaw(yaw: float) -> float:
    """Map an angle in radians into (-pi, pi]."""
    a = math.fmod(yaw, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass(frozen=True)
class PoseRecord:
    frame: int
    x: float
    y: float
    yaw: float

    def __post_init__(self) -> None:
        if self.frame < 1:
            raise DataError(f"pose frame must be >= 1, got {self.frame}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def to_dict(self) -> dict:
        return {"frame": self.frame, "x": self.x, "y": self.y, "yaw": self.yaw}


def load_poses(path: str | Path) -> dict[int, PoseRecord]:
    poses: dict[int, PoseRecord] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != POSE_HEADER:
            raise DataError(f"{path}: expected header {','.join(POSE_HEADER)}")
        for n, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                frame, x, y, yaw = int(row[0]), float(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{n}: bad pose row {row!r}") from None
            if not all(map(math.isfinite, (x, y, yaw))):
                raise DataError(f"{path}:{n}: non-finite pose value")
            if frame in poses:
                raise DataError(f"{path}:{n}: duplicate pose for frame {frame}")
            poses[frame] = PoseRecord(frame, x, y, yaw)
    return poses
