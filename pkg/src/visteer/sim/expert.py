"""Scripted demonstration expert.

A proportional controller over ground-truth state: approach the active
target with the per-step translation clamp, toggle the gripper when close
enough.  The gripper command encodes phase: 0 while approaching, +1 from
grasp through transport, -1 at release.  Its grip toggles are the labeled
phase boundaries that event detection must recover downstream.
"""

from __future__ import annotations

from .success import step_satisfied
from .types import Action, TaskSpec, WorldState
from .world import STEP_CLAMP, handle_point, handle_point_closed

APPROACH_EPS = 0.003  # close enough to toggle the gripper
RELEASE_OPEN_BELOW = 0.05  # let go of the handle once nearly shut


def _clamped_move(dx: float, dy: float, grip: float) -> Action:
    c = STEP_CLAMP
    return Action(max(-c, min(c, dx)), max(-c, min(c, dy)), grip)


class ScriptedExpert:
    """Per-frame expert for one task; stateless between calls."""

    def __init__(self, task: TaskSpec):
        self.task = task

    def done(self, state: WorldState) -> bool:
        return self.active_step_index(state) is None

    def active_step_index(self, state: WorldState) -> int | None:
        for i, s in enumerate(self.task.steps):
            if not step_satisfied(state, self.task, s):
                return i
        # The door can dip under the closed threshold while the hand is
        # still latched on; keep the close step active until it lets go so
        # every phase ends on a gripper event.
        last = self.task.steps[-1]
        if last.verb == "close" and state.gripper.closed and state.gripper.held_object is None:
            return len(self.task.steps) - 1
        return None

    def act(self, state: WorldState) -> Action:
        idx = self.active_step_index(state)
        if idx is None:
            return Action(0.0, 0.0, 0.0)
        step = self.task.steps[idx]
        gx, gy = state.gripper.position

        if step.verb == "pick":
            obj = next(o for o in state.objects if step.object_noun in o.labels)
            tx, ty = obj.position
            if abs(tx - gx) <= APPROACH_EPS and abs(ty - gy) <= APPROACH_EPS:
                return Action(0.0, 0.0, 1.0)
            return _clamped_move(tx - gx, ty - gy, 0.0)

        if step.verb == "place":
            rec = next(r for r in state.receptacles if r.label == step.location_noun)
            tx = (rec.rect[0] + rec.rect[2]) / 2.0
            ty = (rec.rect[1] + rec.rect[3]) / 2.0
            if abs(tx - gx) <= APPROACH_EPS and abs(ty - gy) <= APPROACH_EPS:
                return Action(0.0, 0.0, -1.0)
            return _clamped_move(tx - gx, ty - gy, 0.0)

        if step.verb == "close":
            assert self.task.target_receptacle_id is not None
            rec = state.receptacle_by_id(self.task.target_receptacle_id)
            assert rec.articulation is not None
            if not state.gripper.closed:
                hx, hy = handle_point(rec)
                if abs(hx - gx) <= APPROACH_EPS and abs(hy - gy) <= APPROACH_EPS:
                    return Action(0.0, 0.0, 1.0)
                return _clamped_move(hx - gx, hy - gy, 0.0)
            if rec.articulation.open_fraction <= RELEASE_OPEN_BELOW:
                return Action(0.0, 0.0, -1.0)
            cx, cy = handle_point_closed(rec)
            return _clamped_move(cx - gx, cy - gy, 0.0)

        raise ValueError(f"unknown step verb {step.verb!r}")
