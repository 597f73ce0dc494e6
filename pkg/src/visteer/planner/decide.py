"""Event-time planner decisions and prompt construction.

``advance`` is the rule-based replacement for a reasoning model: given the
active subtask and a summary of what just happened at the gripper, it
decides whether the plan moves on.  ``build_prompt`` turns the active
subtask into a symbolic visual prompt via segmentation: manipulation
targets get an anchor at the mask centroid, placement targets get the
location's bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PromptUnavailableError
from ..prompts import VisualPrompt
from ..render import Observation, mask_centroid
from ..sim.types import WorldState
from ..sim.world import DRAWER_CLOSED_BELOW, rect_contains
from .events import TransitionEvent
from .grammar import Subtask, SubtaskPlan
from .segmenter import segment


@dataclass
class StateSummary:
    """Gripper-centric facts the decision rule conditions on."""

    event_kind: str  # "grasp" | "release"
    gripper_closed: bool
    held_labels: tuple[str, ...] = ()
    release_inside_target: bool | None = None
    articulation_done: bool | None = None


@dataclass
class PlannerDecision:
    reasoning: str
    decision: str  # "continue" | "proceed"
    target_object: str | None
    target_location: str | None


def summarize_transition(
    state: WorldState, plan: SubtaskPlan, event: TransitionEvent
) -> StateSummary:
    """Build the decision input from the post-event world state."""
    held_labels: tuple[str, ...] = ()
    if state.gripper.held_object is not None:
        held_labels = state.object_by_id(state.gripper.held_object).labels

    release_inside = None
    articulation_done = None
    active = plan.active()
    if active is not None and active.verb == "place" and event.kind == "release":
        rec = next((r for r in state.receptacles if r.label == active.location_noun), None)
        release_inside = rec is not None and rect_contains(rec.rect, state.gripper.position)
    if active is not None and active.verb == "close":
        rec = next((r for r in state.receptacles if r.articulation is not None), None)
        articulation_done = (
            rec is not None and rec.articulation.open_fraction < DRAWER_CLOSED_BELOW
        )
    return StateSummary(
        event_kind=event.kind,
        gripper_closed=state.gripper.closed,
        held_labels=held_labels,
        release_inside_target=release_inside,
        articulation_done=articulation_done,
    )


def _targets_of(subtask: Subtask | None) -> tuple[str | None, str | None]:
    if subtask is None:
        return None, None
    return subtask.object_noun, subtask.location_noun


def initial_decision(plan: SubtaskPlan) -> PlannerDecision:
    """Frame-0 pseudo-decision: the first frame is an implicit event."""
    obj, loc = _targets_of(plan.active())
    return PlannerDecision(
        reasoning="episode start; begin the first subtask",
        decision="continue",
        target_object=obj,
        target_location=loc,
    )


def advance(plan: SubtaskPlan, summary: StateSummary) -> PlannerDecision:
    """Decide continue/proceed for one event; advances the cursor on proceed."""
    active = plan.active()
    if active is None:
        return PlannerDecision(
            reasoning="all subtasks already complete; spurious event ignored",
            decision="continue",
            target_object=None,
            target_location=None,
        )

    proceed = False
    why = ""
    if active.verb == "pick":
        if summary.event_kind == "grasp" and active.object_noun in summary.held_labels:
            proceed, why = True, f"gripper closed on the {active.object_noun}"
        elif summary.event_kind == "grasp" and summary.held_labels:
            why = "gripper closed on the wrong object; retry the pick"
        elif summary.event_kind == "grasp":
            why = "gripper closed on nothing; retry the pick"
        else:
            why = "gripper opened during a pick; keep picking"
    elif active.verb == "place":
        if summary.event_kind == "release" and summary.release_inside_target:
            proceed, why = True, f"released the {active.object_noun} inside the {active.location_noun}"
        elif summary.event_kind == "release":
            why = "released outside the target region; retry the placement"
        else:
            why = "unexpected grasp during a place; keep placing"
    elif active.verb == "close":
        if summary.event_kind == "release" and summary.articulation_done:
            proceed, why = True, "door is shut and the hand let go"
        elif summary.event_kind == "release":
            why = "hand let go before the door was shut; keep closing"
        else:
            why = "hand latched onto the handle; keep closing"
    else:
        raise ValueError(f"unknown subtask verb {active.verb!r}")

    if proceed:
        plan.advance_cursor()
        nxt = plan.active()
        obj, loc = _targets_of(nxt)
        if nxt is not None:
            why += f"; next subtask: {nxt.text}"
        else:
            why += "; all subtasks complete"
        return PlannerDecision(
            reasoning=why, decision="proceed", target_object=obj, target_location=loc
        )
    obj, loc = _targets_of(active)
    return PlannerDecision(
        reasoning=why, decision="continue", target_object=obj, target_location=loc
    )


def build_prompt(
    decision: PlannerDecision,
    obs: Observation,
    backend: str = "ground_truth",
    *,
    style: str = "crosshair",
    drag_to_closed: bool = False,
    rng: np.random.Generator | None = None,
) -> VisualPrompt:
    """Turn a decision's targets into a symbolic prompt.

    Placement targets yield a box over the location.  Everything else
    yields an anchor at the target-mask centroid; during a drawer drag
    (``drag_to_closed``) the anchor jumps ahead to where the handle must
    end up, so a prompt follower pulls the door shut.
    """
    if decision.target_object is None and decision.target_location is None:
        raise PromptUnavailableError("decision carries no targets")

    if decision.target_location is not None:
        cand = segment(obs, decision.target_location, backend, rng=rng)
        if cand is None:
            raise PromptUnavailableError(
                f"segmentation returned nothing for {decision.target_location!r}"
            )
        return VisualPrompt(box=cand.box)

    if drag_to_closed:
        for view in obs.articulations.values():
            return VisualPrompt(anchor=view.handle_closed_px, style=style)
        raise PromptUnavailableError("drag target requested but no articulated receptacle")

    cand = segment(obs, decision.target_object, backend, rng=rng)
    if cand is None:
        raise PromptUnavailableError(
            f"segmentation returned nothing for {decision.target_object!r}"
        )
    r, c = mask_centroid(cand.mask)
    return VisualPrompt(anchor=(c, r), style=style)


def build_static_prompt(
    plan: SubtaskPlan,
    obs: Observation,
    backend: str = "ground_truth",
    *,
    style: str = "crosshair",
    rng: np.random.Generator | None = None,
) -> VisualPrompt:
    """Decomposition-off variant: all prompt elements rendered at once."""
    anchor = None
    box = None
    for sub in plan.subtasks:
        if sub.verb == "pick" and anchor is None:
            cand = segment(obs, sub.object_noun, backend, rng=rng)
            if cand is not None:
                r, c = mask_centroid(cand.mask)
                anchor = (c, r)
        if sub.verb == "place" and box is None and sub.location_noun is not None:
            cand = segment(obs, sub.location_noun, backend, rng=rng)
            if cand is not None:
                box = cand.box
    if anchor is None and box is None:
        raise PromptUnavailableError("no segmentable targets in the plan")
    return VisualPrompt(anchor=anchor, box=box, style=style, render_both=True)
