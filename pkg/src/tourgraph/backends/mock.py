"""Fixture-driven backend used by every offline test.

Fixture directory layout (all files optional)::

    responses.json      {"<canonical input hash>": "<reply text>", ...}
    scenes/<traj>.json  scene scripts the extraction op reads chunks from
    lexicon.json        additions to the built-in lexicon
    answers.json        {"<question text>": {"option": "B"}, ...}

Lookup order per call: exact hash hit in ``responses.json``, then the
op-specific rule. Nothing is fabricated: an extraction request for a
trajectory without a scene script is a :class:`FixtureMiss`.
"""

from __future__ import annotations

import json
from functools import cached_property
from pathlib import Path
from typing import Any

from ..errors import FixtureMiss
from ..lexicon import Lexicon, jaccard, load_lexicon
from . import rules
from .base import Backend, BackendProfile, _Reply, canonical_json


class MockBackend(Backend):
    kind = "mock"
    similarity_source = "mock-lexical"

    def __init__(self, profile: BackendProfile):
        super().__init__(profile)
        self.fixture_dir = Path(profile.fixture_dir)
        self._scenes: dict[str, dict | None] = {}

    @cached_property
    def responses(self) -> dict[str, str]:
        path = self.fixture_dir / "responses.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    @cached_property
    def lexicon(self) -> Lexicon:
        return load_lexicon(self.fixture_dir / "lexicon.json")

    @cached_property
    def answers(self) -> dict[str, dict]:
        path = Path(self.profile.scripted_answers) if self.profile.scripted_answers else self.fixture_dir / "answers.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    def scene(self, trajectory_id: str) -> dict | None:
        if trajectory_id not in self._scenes:
            path = self.fixture_dir / "scenes" / f"{trajectory_id}.json"
            self._scenes[trajectory_id] = (
                json.loads(path.read_text(encoding="utf-8")) if path.exists() else None
            )
        return self._scenes[trajectory_id]

    def _complete(self, op, prompt, images, payload, key) -> _Reply:
        if key in self.responses:
            return _Reply(self.responses[key])
        handler = getattr(self, f"_op_{op}", None)
        text = handler(payload, key) if handler and payload is not None else None
        if text is None:
            raise FixtureMiss(key, op)
        return _Reply(text)

    def _op_similarity(self, payload: dict, key: str) -> str:
        return repr(jaccard(payload["a"], payload["b"]))

    def _op_decompose(self, payload: dict, key: str) -> str:
        return canonical_json(rules.decompose_text(payload["text"], self.lexicon))

    def _op_reason(self, payload: dict, key: str) -> str:
        payload = dict(payload)
        payload["scripted"] = self.answers.get(payload.get("question", ""), {})
        return canonical_json(rules.reason(payload, self.lexicon))

    def _op_extract(self, payload: dict, key: str) -> str | None:
        scene = self.scene(payload.get("trajectory_id", ""))
        if scene is None:
            return None
        return canonical_json(scene_chunk(scene, payload["frames"]))


def scene_chunk(scene: dict[str, Any], frames: list[int]) -> dict[str, Any]:
    """What a perfect detector would report for ``frames`` of a scripted scene."""
    window = set(frames)
    objects = []
    present = set()
    for obj in scene.get("objects", []):
        seen = sorted(window.intersection(obj["frames"]))
        if not seen:
            continue
        present.add(obj["key"])
        box = obj.get("bbox")
        objects.append(
            {
                "id": obj["key"],
                "label": obj["label"],
                "color": obj.get("color", []),
                "material": obj.get("material", ""),
                "size": obj.get("size", "unknown"),
                "affordances": obj.get("affordances", []),
                "frames": seen,
                "bboxes": (
                    [{"frame": f, "x": box[0], "y": box[1], "w": box[2], "h": box[3]} for f in seen]
                    if box
                    else []
                ),
            }
        )
    relations = []
    for rel in scene.get("relations", []):
        seen = sorted(window.intersection(rel["frames"]))
        if seen and rel["subject"] in present and rel["object"] in present:
            relations.append(
                {
                    "subject_id": rel["subject"],
                    "predicate": rel["predicate"],
                    "object_id": rel["object"],
                    "frames": seen,
                }
            )
    return {"objects": objects, "relations": relations}
