"""Closed-loop episode execution.

One loop drives simulator, planner session, and a controller.  Per frame:
the session observes the new state (detecting events and updating the
active prompt, which always lags its triggering event by one frame), the
frame is recorded, termination is checked, then the controller acts.

Controllers:

* scripted expert - per-frame, reads privileged state; used for demos.
* visual-servo oracle - per-frame, reads prompt + gripper pixel only.
* trained policy - queried every chunk_size frames, executes the returned
  chunk open-loop.
* random - uniform actions, the success floor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .errors import OracleUnavailableError
from .planner.session import PlannerSession, PromptUpdate
from .policy.model import VisuomotorPolicy, encode_instruction
from .policy.oracle import OraclePhase, visual_servo_oracle
from .prompts import PromptImage, VisualPrompt, rasterize_prompt
from .render import CameraConfig, Observation, px_of, render_observation
from .sim import (
    Action,
    ScriptedExpert,
    SuccessReport,
    TaskSpec,
    WorldState,
    evaluate_success,
    step,
)
from .sim.world import STEP_CAP


@dataclass
class _Geometry:
    """Minimal stand-in for an Observation when only its size matters."""

    width: int
    height: int


@dataclass
class FrameContext:
    t: int
    state: WorldState
    obs: Callable[[], Observation]
    geometry: _Geometry
    prompt: VisualPrompt | None
    prompt_image: PromptImage | None
    update: PromptUpdate
    task: TaskSpec
    session: PlannerSession


class ExpertController:
    kind = "expert"
    wants_obs = False

    def __init__(self, task: TaskSpec):
        self.expert = ScriptedExpert(task)

    def reset(self) -> None:
        pass

    def finished(self, state: WorldState, task: TaskSpec) -> bool:
        return self.expert.done(state)

    def act(self, ctx: FrameContext) -> Action:
        return self.expert.act(ctx.state)


class OracleController:
    kind = "oracle"
    wants_obs = False

    def reset(self) -> None:
        pass

    def finished(self, state: WorldState, task: TaskSpec) -> bool:
        return evaluate_success(state, task).success

    def act(self, ctx: FrameContext) -> Action:
        phase = OraclePhase(
            verb=ctx.session.active_verb(),
            holding=ctx.state.gripper.held_object is not None,
            closed=ctx.state.gripper.closed,
        )
        gp = (
            px_of(ctx.state.gripper.position[0], ctx.geometry.width),
            px_of(ctx.state.gripper.position[1], ctx.geometry.height),
        )
        try:
            return visual_servo_oracle(ctx.geometry, ctx.prompt, gp, phase)
        except OracleUnavailableError:
            return Action(0.0, 0.0, 0.0)


class PolicyController:
    kind = "policy"
    wants_obs = True

    def __init__(self, model: VisuomotorPolicy):
        self.model = model
        self.model.eval()
        self.queue: deque[Action] = deque()

    def reset(self) -> None:
        self.queue.clear()

    def finished(self, state: WorldState, task: TaskSpec) -> bool:
        return evaluate_success(state, task).success

    def act(self, ctx: FrameContext) -> Action:
        if not self.queue:
            self._query(ctx)
        return self.queue.popleft()

    def _query(self, ctx: FrameContext) -> None:
        cfg = self.model.cfg
        obs = ctx.obs()
        tokens = torch.tensor([encode_instruction(ctx.task, cfg.instruction_length)])
        obs_t = torch.from_numpy(obs.overhead.copy())[None]
        prompt_t = None
        if cfg.prompt_mode == "separate_image":
            if ctx.prompt_image is not None:
                prompt_t = torch.from_numpy(ctx.prompt_image.raster.copy())[None]
            else:
                prompt_t = obs_t.clone()  # promptless fallback: raw obs on both streams
        elif cfg.prompt_mode == "direct_overlay" and ctx.prompt is not None:
            obs_t = torch.from_numpy(rasterize_prompt(obs.overhead, ctx.prompt).raster)[None]
        with torch.no_grad():
            out = self.model(tokens, obs_t, prompt_t)
        sx, sy, sg = cfg.action_scale
        for row in out.chunk[0].numpy():
            self.queue.append(Action(float(row[0]) / sx, float(row[1]) / sy, float(row[2]) / sg))


class RandomController:
    kind = "random"
    wants_obs = False

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def reset(self) -> None:
        pass

    def finished(self, state: WorldState, task: TaskSpec) -> bool:
        return evaluate_success(state, task).success

    def act(self, ctx: FrameContext) -> Action:
        return Action(
            float(self.rng.uniform(-0.05, 0.05)),
            float(self.rng.uniform(-0.05, 0.05)),
            float(self.rng.uniform(-1.5, 1.5)),
        )


@dataclass
class RolloutResult:
    task: TaskSpec
    frames: int
    actions: np.ndarray  # (T, 3) float32; row t = action taken at frame t
    phis: np.ndarray  # (T,) float32
    events: list[int]
    key_frames: list[int]
    prompt_ids: np.ndarray  # (T,) int32 index into prompt_table, -1 = none
    prompt_table: list[VisualPrompt]
    obs_rasters: np.ndarray | None  # (T, H, W, 3) uint8 when recorded
    prompt_rasters: np.ndarray | None  # (T, H, W, 3) uint8 when recorded
    subtask_trace: list[tuple[int, int, str | None]]
    decisions: list
    faults: list[tuple[int, str]]
    success: SuccessReport
    final_state: WorldState
    step_cap_hit: bool = False
    width: int = 64
    height: int = 64


class EpisodeDriver:
    """Frame-at-a-time episode executor.

    ``run_episode`` is a loop over :meth:`advance`; the session service
    steps the same driver interactively, so both paths share one code
    path and produce identical rollouts for identical inputs.
    """

    def __init__(
        self,
        state: WorldState,
        task: TaskSpec,
        controller,
        session: PlannerSession,
        cam: CameraConfig | None = None,
        *,
        max_steps: int = STEP_CAP,
        record_frames: bool = False,
    ):
        self.cam = cam or CameraConfig()
        self.geometry = _Geometry(self.cam.width, self.cam.height)
        controller.reset()
        self.state = state
        self.task = task
        self.controller = controller
        self.session = session
        self.max_steps = max_steps
        self.record_frames = record_frames

        self._actions: list[tuple[float, float, float]] = []
        self._phis: list[float] = []
        self._prompt_ids: list[int] = []
        self._prompt_table: list[VisualPrompt] = []
        self._obs_frames: list[np.ndarray] = []
        self._prompt_frames: list[np.ndarray] = []
        self._events: list[int] = []
        self._key_frames: list[int] = []
        self._active_image: PromptImage | None = None
        self._active_prompt_id = -1
        self._cap_hit = False
        self.t = 0
        self.done = False
        self.last_update: PromptUpdate | None = None
        self.last_obs: np.ndarray | None = None
        self.last_state: WorldState = state

    @property
    def frames_emitted(self) -> int:
        return len(self._phis)

    @property
    def active_prompt(self) -> VisualPrompt | None:
        return self.session.active_prompt

    @property
    def active_prompt_image(self) -> PromptImage | None:
        return self._active_image

    def advance(self) -> PromptUpdate:
        """Process one frame: observe, record, and (unless terminal) act."""
        if self.done:
            raise RuntimeError("episode already finished")
        state = self.state
        obs_cache: list[Observation] = []

        def obs_thunk(state=state) -> Observation:
            if not obs_cache:
                obs_cache.append(render_observation(state, self.cam))
            return obs_cache[0]

        update = self.session.observe(state, obs_thunk, self.t)
        if update.prompt_changed and update.active_prompt is not None:
            # the prompt image freezes the frame it was issued on
            self._active_image = rasterize_prompt(obs_thunk().overhead, update.active_prompt)
            self._prompt_table.append(update.active_prompt)
            self._active_prompt_id = len(self._prompt_table) - 1

        self._phis.append(1.0 if state.gripper.closed else 0.0)
        self._prompt_ids.append(self._active_prompt_id)
        if update.event is not None:
            self._events.append(self.t)
        if update.is_key_frame:
            self._key_frames.append(self.t)
        if self.record_frames:
            self._obs_frames.append(obs_thunk().overhead)
            if self._active_image is not None:
                self._prompt_frames.append(self._active_image.raster)
            else:
                self._prompt_frames.append(obs_thunk().overhead)
            self.last_obs = obs_thunk().overhead
        self.last_update = update
        self.last_state = state

        if self.controller.finished(state, self.task):
            self._actions.append((0.0, 0.0, 0.0))
            self.done = True
            return update
        if self.t >= self.max_steps:
            self._actions.append((0.0, 0.0, 0.0))
            self._cap_hit = True
            self.done = True
            return update

        ctx = FrameContext(
            t=self.t,
            state=state,
            obs=obs_thunk,
            geometry=self.geometry,
            prompt=update.active_prompt,
            prompt_image=self._active_image,
            update=update,
            task=self.task,
            session=self.session,
        )
        action = self.controller.act(ctx)
        self._actions.append(action.as_tuple())
        self.state, _ = step(state, action)
        self.t += 1
        return update

    def result(self) -> RolloutResult:
        if not self.done:
            raise RuntimeError("episode still in progress")
        return RolloutResult(
            task=self.task,
            frames=len(self._phis),
            actions=np.asarray(self._actions, dtype=np.float32),
            phis=np.asarray(self._phis, dtype=np.float32),
            events=self._events,
            key_frames=self._key_frames,
            prompt_ids=np.asarray(self._prompt_ids, dtype=np.int32),
            prompt_table=self._prompt_table,
            obs_rasters=np.stack(self._obs_frames) if self.record_frames else None,
            prompt_rasters=np.stack(self._prompt_frames) if self.record_frames else None,
            subtask_trace=list(self.session.subtask_trace),
            decisions=list(self.session.decisions),
            faults=list(self.session.faults),
            success=evaluate_success(self.state, self.task),
            final_state=self.state,
            step_cap_hit=self._cap_hit,
            width=self.cam.width,
            height=self.cam.height,
        )


def run_episode(
    state: WorldState,
    task: TaskSpec,
    controller,
    session: PlannerSession,
    cam: CameraConfig | None = None,
    *,
    max_steps: int = STEP_CAP,
    record_frames: bool = False,
) -> RolloutResult:
    driver = EpisodeDriver(
        state,
        task,
        controller,
        session,
        cam,
        max_steps=max_steps,
        record_frames=record_frames,
    )
    while not driver.done:
        driver.advance()
    return driver.result()
