from .types import (
    Action,
    ArticulationState,
    GripperState,
    ObjectInstance,
    Receptacle,
    TaskSpec,
    TaskStep,
    TransitionInfo,
    WorldState,
)
from .world import (
    DRAWER_CLOSED_BELOW,
    GRASP_RADIUS,
    STEP_CAP,
    STEP_CLAMP,
    door_rect,
    gripper_phi,
    handle_point,
    handle_point_closed,
    rect_contains,
    step,
)
from .scenes import FAMILIES, OOD_TAGS, family_objects, generate_scene, load_registry
from .expert import ScriptedExpert
from .success import SuccessReport, evaluate_success, partial_credit

__all__ = [
    "Action",
    "ArticulationState",
    "GripperState",
    "ObjectInstance",
    "Receptacle",
    "TaskSpec",
    "TaskStep",
    "TransitionInfo",
    "WorldState",
    "DRAWER_CLOSED_BELOW",
    "GRASP_RADIUS",
    "STEP_CAP",
    "STEP_CLAMP",
    "door_rect",
    "gripper_phi",
    "handle_point",
    "handle_point_closed",
    "rect_contains",
    "step",
    "FAMILIES",
    "OOD_TAGS",
    "family_objects",
    "generate_scene",
    "load_registry",
    "ScriptedExpert",
    "SuccessReport",
    "evaluate_success",
    "partial_credit",
]
