"""Deterministic single-gripper dynamics.

``step`` is a pure function: it never mutates its input state and contains no
randomness, so replaying a recorded action sequence reproduces the exact same
states bit for bit.
"""

from __future__ import annotations

import math

from .types import (
    Action,
    GripperState,
    ObjectInstance,
    Receptacle,
    Rect,
    TransitionInfo,
    Vec2,
    WorldState,
)

GRASP_RADIUS = 0.04  # gripper-to-center distance that allows a grasp
HANDLE_RADIUS = 0.05  # gripper-to-handle distance that engages a drawer drag
STEP_CLAMP = 0.05  # per-step translation limit on each axis
DRAWER_CLOSED_BELOW = 0.1  # open_fraction below this counts as closed
STEP_CAP = 400  # episode step budget
POS_MAX = 0.999999  # positions live in [0, 1)

GRIP_CLOSE_ABOVE = 0.5
GRIP_OPEN_BELOW = -0.5


def gripper_phi(state: WorldState) -> float:
    """Discrete gripper status: 1.0 closed, 0.0 open."""
    return 1.0 if state.gripper.closed else 0.0


def rect_contains(rect: Rect, point: Vec2) -> bool:
    """Half-open containment so tiling rects assign each point uniquely."""
    x1, y1, x2, y2 = rect
    x, y = point
    return x1 <= x < x2 and y1 <= y < y2


def door_rect(receptacle: Receptacle) -> Rect:
    """Normalized rect of the sliding door panel at the current opening."""
    if receptacle.articulation is None:
        raise ValueError(f"receptacle {receptacle.receptacle_id} is not articulated")
    x1, y1, x2, y2 = receptacle.rect
    offset = receptacle.articulation.open_fraction * (x2 - x1)
    return (x1 + offset, y1, x2 + offset, y2)


def handle_point(receptacle: Receptacle) -> Vec2:
    """Current handle position: the center of the door panel."""
    x1, y1, x2, y2 = door_rect(receptacle)
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


def handle_point_closed(receptacle: Receptacle) -> Vec2:
    """Where the handle sits once the door is fully closed."""
    x1, y1, x2, y2 = receptacle.rect
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def _dist(a: Vec2, b: Vec2) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _nearest_graspable(objects: list[ObjectInstance], point: Vec2) -> ObjectInstance | None:
    best: tuple[float, int] | None = None
    found = None
    for obj in objects:
        if obj.held:
            continue
        d = _dist(obj.position, point)
        if d <= GRASP_RADIUS:
            key = (d, obj.object_id)
            if best is None or key < best:
                best = key
                found = obj
    return found


def step(state: WorldState, action: Action) -> tuple[WorldState, TransitionInfo]:
    """Advance the world by one control step.

    Order of effects: translation (clamped, then bounded to the table),
    held-object carry, drawer drag for a closed empty gripper that started
    the step at the handle, then the gripper command.  Closing grasps the
    nearest object center within ``GRASP_RADIUS``; opening releases the held
    object in place and reports every receptacle containing its center.
    """
    nxt = state.copy()
    info = TransitionInfo(phi_before=gripper_phi(state))

    dx = _clamp(action.dx, -STEP_CLAMP, STEP_CLAMP)
    dy = _clamp(action.dy, -STEP_CLAMP, STEP_CLAMP)
    gx, gy = nxt.gripper.position
    new_x = _clamp(gx + dx, 0.0, POS_MAX)
    new_y = _clamp(gy + dy, 0.0, POS_MAX)
    applied_dx = new_x - gx
    nxt.gripper.position = (new_x, new_y)

    if nxt.gripper.held_object is not None:
        nxt.object_by_id(nxt.gripper.held_object).position = nxt.gripper.position

    # Drag check uses the pre-step pose: the hand must already be closed on
    # the handle before it can pull the door along this step's motion.
    if state.gripper.closed and state.gripper.held_object is None:
        for rec in nxt.receptacles:
            if rec.articulation is None:
                continue
            pre = state.receptacle_by_id(rec.receptacle_id)
            if _dist(state.gripper.position, handle_point(pre)) <= HANDLE_RADIUS:
                width = rec.rect[2] - rec.rect[0]
                before = rec.articulation.open_fraction
                rec.articulation.open_fraction = _clamp(before + applied_dx / width, 0.0, 1.0)
                if rec.articulation.open_fraction != before:
                    info.drawer_moved = True

    if action.grip > GRIP_CLOSE_ABOVE and not nxt.gripper.closed:
        nxt.gripper.closed = True
        info.grip_changed = True
        grasped = _nearest_graspable(nxt.objects, nxt.gripper.position)
        if grasped is not None:
            grasped.held = True
            grasped.position = nxt.gripper.position
            nxt.gripper.held_object = grasped.object_id
            info.grasped_object = grasped.object_id
    elif action.grip < GRIP_OPEN_BELOW and nxt.gripper.closed:
        nxt.gripper.closed = False
        info.grip_changed = True
        if nxt.gripper.held_object is not None:
            released = nxt.object_by_id(nxt.gripper.held_object)
            released.held = False
            nxt.gripper.held_object = None
            info.released_object = released.object_id
            info.released_into = tuple(
                rec.receptacle_id
                for rec in nxt.receptacles
                if rect_contains(rec.rect, released.position)
            )

    nxt.step_index = state.step_index + 1
    info.phi_after = gripper_phi(nxt)
    return nxt, info
