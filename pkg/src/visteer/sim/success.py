"""Task success scoring.

Binary families succeed when every task step is satisfied in the final
state.  Addressed placement earns graded credit by how far the delivered
cell is from the requested one: exact hit 1.0, edge neighbor 0.5, diagonal
neighbor 0.25, anything else 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .types import TaskSpec, TaskStep, WorldState
from .world import DRAWER_CLOSED_BELOW, rect_contains


@dataclass
class SuccessReport:
    score: float
    success: bool
    step_flags: tuple[bool, ...]
    detail: str = ""


def partial_credit(target: tuple[int, int], actual: tuple[int, int] | None) -> float:
    if actual is None:
        return 0.0
    dr = abs(target[0] - actual[0])
    dc = abs(target[1] - actual[1])
    if dr == 0 and dc == 0:
        return 1.0
    if dr + dc == 1:
        return 0.5
    if dr == 1 and dc == 1:
        return 0.25
    return 0.0


def _resolve_object(state: WorldState, noun: str) -> int | None:
    for obj in state.objects:
        if noun in obj.labels:
            return obj.object_id
    return None


def _resolve_receptacle(state: WorldState, noun: str) -> int | None:
    for rec in state.receptacles:
        if rec.label == noun:
            return rec.receptacle_id
    return None


def step_satisfied(state: WorldState, task: TaskSpec, step: TaskStep) -> bool:
    """Whether one task step is currently satisfied.

    A pick counts as satisfied while the object is held, or once a later
    place step has deposited it; this keeps the predicate meaningful at any
    point in a multi-step episode, not just at the end.
    """
    if step.verb == "pick":
        oid = _resolve_object(state, step.object_noun)
        if oid is None:
            return False
        if state.gripper.held_object == oid:
            return True
        later_place = next(
            (
                s
                for s in task.steps
                if s.verb == "place" and s.object_noun == step.object_noun
            ),
            None,
        )
        return later_place is not None and step_satisfied(state, task, later_place)
    if step.verb == "place":
        oid = _resolve_object(state, step.object_noun)
        rid = _resolve_receptacle(state, step.location_noun or "")
        if oid is None or rid is None:
            return False
        obj = state.object_by_id(oid)
        rec = state.receptacle_by_id(rid)
        return not obj.held and rect_contains(rec.rect, obj.position)
    if step.verb == "close":
        if task.target_receptacle_id is None:
            return False
        rec = state.receptacle_by_id(task.target_receptacle_id)
        if rec.articulation is None:
            return False
        return rec.articulation.open_fraction < DRAWER_CLOSED_BELOW
    raise ValueError(f"unknown step verb {step.verb!r}")


def _cell_of(state: WorldState, task: TaskSpec) -> tuple[int, int] | None:
    obj = state.object_by_id(task.target_object_id)
    if obj.held:
        return None
    for rec in state.receptacles:
        if rec.kind == "grid_cell" and rect_contains(rec.rect, obj.position):
            label_parts = rec.label.split()
            return (int(label_parts[1]) - 1, int(label_parts[3]) - 1)
    return None


def evaluate_success(state: WorldState, task: TaskSpec) -> SuccessReport:
    flags = tuple(step_satisfied(state, task, s) for s in task.steps)
    if task.family == "grid_place":
        assert task.target_cell is not None
        actual = _cell_of(state, task)
        score = partial_credit(task.target_cell, actual)
        return SuccessReport(
            score=score,
            success=score == 1.0,
            step_flags=flags,
            detail=f"target {task.target_cell} actual {actual}",
        )
    ok = all(flags)
    return SuccessReport(score=1.0 if ok else 0.0, success=ok, step_flags=flags)
