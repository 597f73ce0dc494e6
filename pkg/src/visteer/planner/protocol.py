"""Wire schemas for delegating planner decisions to an external service.

Two JSON exchanges, with top-level field names fixed by the protocol:

* decompose: {"task_description": ...} -> {"subtasks": ["...", ...]}
* detect: {"task", "current_subtask", "next_subtask", "gripper_state",
  "images"} -> {"reasoning", "decision", "target_object", "target_location"}

``decision`` is "continue" or "proceed"; a null target maps to absent.
Validators raise ProtocolError with a dotted path to the offending field.
"""

from __future__ import annotations

import base64
from typing import Any

import numpy as np

from ..errors import ProtocolError
from ..render import Observation
from .decide import PlannerDecision, StateSummary
from .grammar import SubtaskPlan

DECISIONS = ("continue", "proceed")
GRIPPER_VALUES = ("open", "closed")


def _require(obj: dict, key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise ProtocolError("expected an object", path or "<root>")
    if key not in obj:
        raise ProtocolError(f"missing field {key!r}", f"{path}{key}")
    return obj[key]


def _require_str(obj: dict, key: str, path: str) -> str:
    v = _require(obj, key, path)
    if not isinstance(v, str):
        raise ProtocolError("expected a string", f"{path}{key}")
    return v


def _optional_str(obj: dict, key: str, path: str) -> str | None:
    if key not in obj or obj[key] is None:
        return None
    v = obj[key]
    if not isinstance(v, str):
        raise ProtocolError("expected a string or null", f"{path}{key}")
    return v


def encode_image(raster: np.ndarray) -> dict[str, Any]:
    return {
        "width": int(raster.shape[1]),
        "height": int(raster.shape[0]),
        "rgb8": base64.b64encode(np.ascontiguousarray(raster).tobytes()).decode("ascii"),
    }


def decode_image(obj: dict, path: str) -> np.ndarray:
    w = _require(obj, "width", path)
    h = _require(obj, "height", path)
    if not isinstance(w, int) or not isinstance(h, int) or w <= 0 or h <= 0:
        raise ProtocolError("image dimensions must be positive integers", f"{path}width")
    data = _require_str(obj, "rgb8", path)
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 payload: {exc}", f"{path}rgb8") from exc
    if len(raw) != w * h * 3:
        raise ProtocolError(
            f"payload length {len(raw)} does not match {w}x{h}x3", f"{path}rgb8"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def build_decompose_request(instruction: str) -> dict[str, Any]:
    return {"task_description": instruction}


def parse_decompose_request(obj: Any) -> str:
    return _require_str(obj, "task_description", "")


def build_decompose_response(subtasks: list[str]) -> dict[str, Any]:
    return {"subtasks": list(subtasks)}


def parse_decompose_response(obj: Any) -> list[str]:
    subtasks = _require(obj, "subtasks", "")
    if not isinstance(subtasks, list) or not subtasks:
        raise ProtocolError("expected a non-empty array", "subtasks")
    out = []
    for i, s in enumerate(subtasks):
        if not isinstance(s, str) or not s:
            raise ProtocolError("expected a non-empty string", f"subtasks[{i}]")
        out.append(s)
    return out


def build_gripper_state(summary: StateSummary) -> dict[str, Any]:
    current = "closed" if summary.gripper_closed else "open"
    previous = "open" if summary.event_kind == "grasp" else "closed"
    return {
        "current": current,
        "previous": previous,
        "held_object": summary.held_labels[0] if summary.held_labels else None,
        "release_inside_target": summary.release_inside_target,
        "articulation_done": summary.articulation_done,
    }


def parse_gripper_state(obj: Any, path: str = "gripper_state.") -> StateSummary:
    current = _require_str(obj, "current", path)
    previous = _require_str(obj, "previous", path)
    for key, value in (("current", current), ("previous", previous)):
        if value not in GRIPPER_VALUES:
            raise ProtocolError(f"expected one of {GRIPPER_VALUES}", f"{path}{key}")
    held = _optional_str(obj, "held_object", path)
    inside = obj.get("release_inside_target")
    if inside is not None and not isinstance(inside, bool):
        raise ProtocolError("expected a boolean or null", f"{path}release_inside_target")
    art = obj.get("articulation_done")
    if art is not None and not isinstance(art, bool):
        raise ProtocolError("expected a boolean or null", f"{path}articulation_done")
    return StateSummary(
        event_kind="grasp" if current == "closed" else "release",
        gripper_closed=current == "closed",
        held_labels=(held,) if held else (),
        release_inside_target=inside,
        articulation_done=art,
    )


def build_detect_request(
    plan: SubtaskPlan,
    summary: StateSummary,
    obs: Observation | None,
    prev_obs: Observation | None,
) -> dict[str, Any]:
    active = plan.active()
    nxt = (
        plan.subtasks[plan.cursor + 1].text if plan.cursor + 1 < len(plan.subtasks) else None
    )
    images = []
    if prev_obs is not None:
        images.append(encode_image(prev_obs.overhead))
    if obs is not None:
        images.append(encode_image(obs.overhead))
    return {
        "task": plan.instruction,
        "current_subtask": active.text if active is not None else "",
        "next_subtask": nxt,
        "gripper_state": build_gripper_state(summary),
        "images": images,
    }


def parse_detect_request(obj: Any) -> dict[str, Any]:
    task = _require_str(obj, "task", "")
    current = _require_str(obj, "current_subtask", "")
    nxt = _optional_str(obj, "next_subtask", "")
    summary = parse_gripper_state(_require(obj, "gripper_state", ""))
    images_raw = _require(obj, "images", "")
    if not isinstance(images_raw, list):
        raise ProtocolError("expected an array", "images")
    images = [decode_image(img, f"images[{i}].") for i, img in enumerate(images_raw)]
    return {
        "task": task,
        "current_subtask": current,
        "next_subtask": nxt,
        "summary": summary,
        "images": images,
    }


def build_detect_response(decision: PlannerDecision) -> dict[str, Any]:
    return {
        "reasoning": decision.reasoning,
        "decision": decision.decision,
        "target_object": decision.target_object,
        "target_location": decision.target_location,
    }


def parse_detect_response(obj: Any) -> PlannerDecision:
    reasoning = _require_str(obj, "reasoning", "")
    decision = _require_str(obj, "decision", "")
    if decision not in DECISIONS:
        raise ProtocolError(f"expected one of {DECISIONS}", "decision")
    target_object = _optional_str(obj, "target_object", "")
    target_location = _optional_str(obj, "target_location", "")
    return PlannerDecision(
        reasoning=reasoning,
        decision=decision,
        target_object=target_object,
        target_location=target_location,
    )
