"""Per-episode planner orchestration.

The session owns the subtask plan, watches the gripper-status stream for
events, invokes the decision rule (or an external service) at each event,
and manages the active visual prompt.  A prompt built in response to the
event at frame t takes effect at frame t+1; the frame where the event fired
is still supervised under the prompt that was visible when it happened.

Modes:

* ``rule`` - decisions and prompts are produced locally.
* ``external`` - decisions are delegated to an HTTP planner; on timeout or
  protocol failure the rule-based path takes over and the degradation is
  logged as a fault.
* ``human`` - subtask bookkeeping still runs, but prompts only change via
  ``submit_prompt``.
* ``static`` - decomposition-off: one combined prompt built on the first
  frame and never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NoMatchError, PromptUnavailableError
from ..prompts import VisualPrompt
from ..render import Observation
from ..sim.types import WorldState
from ..sim.world import gripper_phi
from .decide import (
    PlannerDecision,
    advance,
    build_prompt,
    build_static_prompt,
    initial_decision,
    summarize_transition,
)
from .events import EPSILON, TransitionEvent, detect_event
from .grammar import SubtaskPlan, decompose

MODES = ("rule", "external", "human", "static")


@dataclass
class PromptUpdate:
    """What the session concluded about one frame."""

    frame_index: int
    active_prompt: VisualPrompt | None
    prompt_changed: bool
    is_key_frame: bool
    event: TransitionEvent | None
    decision: PlannerDecision | None
    subtask_index: int
    subtask_text: str | None
    plan_complete: bool
    fault: str | None = None


@dataclass
class PlannerSession:
    instruction: str
    mode: str = "rule"
    backend: str = "ground_truth"
    style: str = "crosshair"
    epsilon: float = EPSILON
    rng: np.random.Generator | None = None
    external: "object | None" = None  # ExternalPlannerClient, optional
    plan: SubtaskPlan = field(init=False)
    prev_phi: float | None = field(init=False, default=None)
    active_prompt: VisualPrompt | None = field(init=False, default=None)
    staged: VisualPrompt | None = field(init=False, default=None)
    events: list[TransitionEvent] = field(init=False, default_factory=list)
    decisions: list[tuple[int, PlannerDecision]] = field(init=False, default_factory=list)
    subtask_trace: list[tuple[int, int, str | None]] = field(init=False, default_factory=list)
    faults: list[tuple[int, str]] = field(init=False, default_factory=list)
    prev_obs: Observation | None = field(init=False, default=None)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown planner mode {self.mode!r}")
        self.plan = self._decompose()

    def _decompose(self) -> SubtaskPlan:
        if self.mode == "external" and self.external is not None:
            try:
                return self.external.decompose(self.instruction)
            except Exception as exc:  # timeout or protocol failure
                self.faults = [(-1, f"external decompose degraded to rule-based: {exc}")]
        return decompose(self.instruction)

    def active_verb(self) -> str | None:
        sub = self.plan.active()
        return None if sub is None else sub.verb

    def active_text(self) -> str | None:
        sub = self.plan.active()
        return None if sub is None else sub.text

    def submit_prompt(self, prompt: VisualPrompt, width: int, height: int) -> None:
        """Stage a human-authored prompt; it applies from the next frame."""
        prompt.validate(width, height)
        self.staged = prompt

    def observe(
        self,
        state: WorldState,
        obs_provider: Callable[[], Observation],
        frame_index: int,
    ) -> PromptUpdate:
        phi = gripper_phi(state)
        event = None
        if self.prev_phi is not None and detect_event(self.prev_phi, phi, self.epsilon):
            event = TransitionEvent(frame_index, self.prev_phi, phi)
            self.events.append(event)
        self.prev_phi = phi

        prompt_changed = False
        if self.staged is not None:
            self.active_prompt = self.staged
            self.staged = None
            prompt_changed = True

        fault = None
        decision = None
        if frame_index == 0:
            decision = initial_decision(self.plan)
            self.decisions.append((0, decision))
            self.subtask_trace.append((0, self.plan.cursor, self.active_text()))
            if self.mode in ("rule", "external"):
                built, fault = self._build_safely(decision, obs_provider, drag=False)
                if built is not None:
                    self.active_prompt = built
                    prompt_changed = True
            elif self.mode == "static":
                try:
                    self.active_prompt = build_static_prompt(
                        self.plan, obs_provider(), self.backend, style=self.style, rng=self.rng
                    )
                    prompt_changed = True
                except (PromptUnavailableError, NoMatchError) as exc:
                    fault = str(exc)
        elif event is not None and self.mode != "static":
            summary = summarize_transition(state, self.plan, event)
            cursor_before = self.plan.cursor
            decision = self._decide(summary, obs_provider, frame_index)
            self.decisions.append((frame_index, decision))
            if self.plan.cursor != cursor_before:
                self.subtask_trace.append((frame_index, self.plan.cursor, self.active_text()))
            if self.mode != "human":
                if decision.decision == "proceed" and not self.plan.complete:
                    self.staged, fault = self._build_safely(decision, obs_provider, drag=False)
                else:
                    active = self.plan.active()
                    if (
                        active is not None
                        and active.verb == "close"
                        and summary.event_kind == "grasp"
                    ):
                        self.staged, fault = self._build_safely(
                            decision, obs_provider, drag=True
                        )
        elif event is not None:
            # static mode: events are recorded but never re-plan
            pass

        if fault is not None:
            self.faults.append((frame_index, fault))
        try:
            self.prev_obs = obs_provider() if self.mode == "external" else None
        except Exception:
            self.prev_obs = None

        return PromptUpdate(
            frame_index=frame_index,
            active_prompt=self.active_prompt,
            prompt_changed=prompt_changed,
            is_key_frame=frame_index == 0 or event is not None,
            event=event,
            decision=decision,
            subtask_index=self.plan.cursor,
            subtask_text=self.active_text(),
            plan_complete=self.plan.complete,
            fault=fault,
        )

    def _decide(self, summary, obs_provider, frame_index) -> PlannerDecision:
        if self.mode == "external" and self.external is not None:
            try:
                decision = self.external.detect(
                    plan=self.plan,
                    summary=summary,
                    obs=obs_provider(),
                    prev_obs=self.prev_obs,
                )
                if decision.decision == "proceed" and not self.plan.complete:
                    self.plan.advance_cursor()
                return decision
            except Exception as exc:
                self.faults.append(
                    (frame_index, f"external detect degraded to rule-based: {exc}")
                )
        return advance(self.plan, summary)

    def _build_safely(self, decision, obs_provider, *, drag: bool):
        try:
            prompt = build_prompt(
                decision,
                obs_provider(),
                self.backend,
                style=self.style,
                drag_to_closed=drag,
                rng=self.rng,
            )
            return prompt, None
        except (PromptUnavailableError, NoMatchError) as exc:
            return None, str(exc)
