"""Deterministic visual-servo controller over prompts.

A proportional controller in pixel space that reads nothing but the prompt
geometry and the gripper pixel position: no instruction, no object
appearance.  Pick-style phases track the anchor and close the gripper when
within 3 px; place phases track the box center and release on arrival;
drawer drags track the anchor (the handle's closed position) and let
go on arrival.  When the prompt and phase disagree, which happens for one
frame after each planner hand-off, the controller holds still.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import OracleUnavailableError
from ..prompts import VisualPrompt
from ..render import Observation
from ..sim.types import Action

GRIP_WITHIN_PX = 3.0
RELEASE_WITHIN_PX = 1.5
DRAG_RELEASE_PX = 0.75


@dataclass
class OraclePhase:
    verb: str | None  # "pick" | "place" | "close" | None once the plan is done
    holding: bool
    closed: bool


def _toward(
    target_px: tuple[float, float], gripper_px: tuple[int, int], w: int, h: int, grip: float
) -> Action:
    dx = (target_px[0] - gripper_px[0]) / w
    dy = (target_px[1] - gripper_px[1]) / h
    return Action(dx, dy, grip)


def _dist_px(a: tuple[float, float], b: tuple[int, int]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def visual_servo_oracle(
    obs: Observation,
    prompt: VisualPrompt | None,
    gripper_px: tuple[int, int],
    phase: OraclePhase,
) -> Action:
    if prompt is None:
        raise OracleUnavailableError("oracle has no prompt to track")
    w, h = obs.width, obs.height
    hold = Action(0.0, 0.0, 0.0)

    if phase.verb is None:
        return hold

    if phase.verb == "pick":
        if phase.holding:
            return hold
        if prompt.anchor is None:
            return hold  # prompt lags the phase by one frame
        if phase.closed:
            # closed on nothing: reopen while moving in, then regrip exactly
            return _toward(prompt.anchor, gripper_px, w, h, -1.0)
        if _dist_px(prompt.anchor, gripper_px) <= GRIP_WITHIN_PX:
            return Action(0.0, 0.0, 1.0)
        return _toward(prompt.anchor, gripper_px, w, h, 0.0)

    if phase.verb == "place":
        if prompt.box is None or not phase.holding:
            return hold
        u1, v1, u2, v2 = prompt.box
        center = ((u1 + u2) / 2.0, (v1 + v2) / 2.0)
        # release only near the box center: a pixel just inside the box
        # edge can still sit outside the region it depicts
        if _dist_px(center, gripper_px) <= RELEASE_WITHIN_PX:
            return Action(0.0, 0.0, -1.0)
        return _toward(center, gripper_px, w, h, 0.0)

    if phase.verb == "close":
        if prompt.anchor is None:
            return hold
        d = _dist_px(prompt.anchor, gripper_px)
        if not phase.closed:
            if d <= GRIP_WITHIN_PX:
                return Action(0.0, 0.0, 1.0)
            return _toward(prompt.anchor, gripper_px, w, h, 0.0)
        if d <= DRAG_RELEASE_PX:
            return Action(0.0, 0.0, -1.0)
        return _toward(prompt.anchor, gripper_px, w, h, 0.0)

    raise ValueError(f"unknown phase verb {phase.verb!r}")
