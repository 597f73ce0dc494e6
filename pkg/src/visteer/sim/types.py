"""Core state dataclasses for the tabletop world.

Positions are normalized to the unit square, x to the right and y downward,
so pixel coordinates in rendered views share the same orientation.  All state
is plain data; dynamics live in :mod:`visteer.sim.world` as a pure function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

Vec2 = tuple[float, float]
Rect = tuple[float, float, float, float]  # x1, y1, x2, y2 with x1 < x2, y1 < y2

SHAPES = ("circle", "square", "triangle", "cross")
RECEPTACLE_KINDS = ("box", "plate", "grid_cell", "drawer")


@dataclass
class ObjectInstance:
    """A rigid movable item on the table.

    ``labels`` are the noun phrases the entity answers to in segmentation
    queries; the first one is the display label.  ``radius`` is the half
    extent used for both rasterization and the visual footprint.
    """

    object_id: int
    shape: str
    color: str
    radius: float
    position: Vec2
    labels: tuple[str, ...]
    category: str | None = None
    held: bool = False


@dataclass
class ArticulationState:
    open_fraction: float  # 0 closed, 1 fully open


@dataclass
class Receptacle:
    """A fixed region objects can be placed into.

    Drawers carry an articulation state; their door panel slides in +x by
    ``open_fraction`` times the body width, and the handle rides the panel.
    """

    receptacle_id: int
    kind: str
    label: str
    rect: Rect
    color: str | None = None
    articulation: ArticulationState | None = None


@dataclass
class GripperState:
    position: Vec2
    closed: bool = False
    held_object: int | None = None


@dataclass
class Action:
    """One control step: a planar translation and a gripper command.

    ``grip`` > 0.5 requests close, < -0.5 requests open, otherwise hold.
    Translations are clamped by the dynamics, not here.
    """

    dx: float
    dy: float
    grip: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.grip)


@dataclass
class TaskStep:
    verb: str  # "pick" | "place" | "close"
    object_noun: str
    location_noun: str | None = None


@dataclass
class TaskSpec:
    """Ground-truth description of what an episode must achieve."""

    family: str
    instruction: str
    steps: tuple[TaskStep, ...]
    target_object_id: int
    target_receptacle_id: int | None = None
    target_cell: tuple[int, int] | None = None  # (row, col), grid placement only
    ood_tag: str = "none"


@dataclass
class TransitionInfo:
    """What happened during one dynamics step."""

    grip_changed: bool = False
    grasped_object: int | None = None
    released_object: int | None = None
    released_into: tuple[int, ...] = ()
    drawer_moved: bool = False
    phi_before: float = 0.0
    phi_after: float = 0.0


@dataclass
class WorldState:
    objects: list[ObjectInstance]
    receptacles: list[Receptacle]
    gripper: GripperState
    step_index: int = 0

    def object_by_id(self, object_id: int) -> ObjectInstance:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def receptacle_by_id(self, receptacle_id: int) -> Receptacle:
        for rec in self.receptacles:
            if rec.receptacle_id == receptacle_id:
                return rec
        raise KeyError(f"no receptacle with id {receptacle_id}")

    def copy(self) -> "WorldState":
        return WorldState(
            objects=[replace(o) for o in self.objects],
            receptacles=[
                replace(
                    r,
                    articulation=None
                    if r.articulation is None
                    else ArticulationState(r.articulation.open_fraction),
                )
                for r in self.receptacles
            ],
            gripper=replace(self.gripper),
            step_index=self.step_index,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "objects": [
                {
                    "object_id": o.object_id,
                    "shape": o.shape,
                    "color": o.color,
                    "radius": o.radius,
                    "position": list(o.position),
                    "labels": list(o.labels),
                    "category": o.category,
                    "held": o.held,
                }
                for o in self.objects
            ],
            "receptacles": [
                {
                    "receptacle_id": r.receptacle_id,
                    "kind": r.kind,
                    "label": r.label,
                    "rect": list(r.rect),
                    "color": r.color,
                    "articulation": None
                    if r.articulation is None
                    else {"open_fraction": r.articulation.open_fraction},
                }
                for r in self.receptacles
            ],
            "gripper": {
                "position": list(self.gripper.position),
                "closed": self.gripper.closed,
                "held_object": self.gripper.held_object,
            },
            "step_index": self.step_index,
        }

    def canonical_json(self) -> str:
        """Byte-stable serialization used by determinism checks."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def task_to_dict(task: TaskSpec) -> dict[str, Any]:
    return {
        "family": task.family,
        "instruction": task.instruction,
        "steps": [
            {"verb": s.verb, "object_noun": s.object_noun, "location_noun": s.location_noun}
            for s in task.steps
        ],
        "target_object_id": task.target_object_id,
        "target_receptacle_id": task.target_receptacle_id,
        "target_cell": None if task.target_cell is None else list(task.target_cell),
        "ood_tag": task.ood_tag,
    }


def task_from_dict(d: dict[str, Any]) -> TaskSpec:
    return TaskSpec(
        family=d["family"],
        instruction=d["instruction"],
        steps=tuple(
            TaskStep(s["verb"], s["object_noun"], s.get("location_noun")) for s in d["steps"]
        ),
        target_object_id=d["target_object_id"],
        target_receptacle_id=d.get("target_receptacle_id"),
        target_cell=None if d.get("target_cell") is None else tuple(d["target_cell"]),
        ood_tag=d.get("ood_tag", "none"),
    )
