"""Live simulator sessions behind the network service.

Each session owns one episode driver plus a dedicated worker thread; all
mutation flows through the worker's command queue, so the single-writer
contract holds by construction.  Subscribers receive pushed event dicts
through bounded queues: a consumer that falls behind loses intermediate
frames and is handed a fresh snapshot instead of stalling the simulation.
"""

from __future__ import annotations

import base64
import itertools
import queue
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from ..errors import SessionError, VisteerError
from ..planner.session import PlannerSession
from ..policy.checkpoint import load_policy
from ..prompts import VisualPrompt
from ..render import CameraConfig, render_observation
from ..rollout import (
    EpisodeDriver,
    ExpertController,
    OracleController,
    PolicyController,
    RandomController,
)
from ..sim.scenes import generate_scene
from ..sim.world import STEP_CAP

PROTOCOL_VERSION = 1
SESSION_MODES = ("auto_planner", "human_prompt")
COMMAND_TIMEOUT = 10.0


def encode_raster(raster: np.ndarray) -> dict[str, Any]:
    h, w = raster.shape[:2]
    return {
        "width": int(w),
        "height": int(h),
        "encoding": "base64/raw-rgb8",
        "data": base64.b64encode(raster.tobytes()).decode("ascii"),
    }


def decode_raster(obj: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    h, w = int(obj["height"]), int(obj["width"])
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)


def _check_coords(obj: dict, key: str, arity: int) -> None:
    value = obj.get(key)
    if value is None:
        return
    if (
        not isinstance(value, (list, tuple))
        or len(value) != arity
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)
    ):
        raise SessionError(f"prompt {key} must be {arity} numbers")


def prompt_from_wire(obj: dict[str, Any]) -> VisualPrompt:
    if not isinstance(obj, dict):
        raise SessionError("prompt must be an object")
    _check_coords(obj, "anchor", 2)
    _check_coords(obj, "box", 4)
    try:
        return VisualPrompt.from_dict(obj)
    except (TypeError, ValueError) as exc:
        raise SessionError(f"malformed prompt: {exc}") from exc


def rollout_result_dict(result) -> dict:
    """JSON payload for a finished rollout; shared by every result route."""
    created: dict[int, int] = {}
    for t, pid in enumerate(result.prompt_ids.tolist()):
        if pid >= 0 and pid not in created:
            created[pid] = t
    return {
        "frames": result.frames,
        "actions": [[float(a) for a in row] for row in result.actions],
        "events": list(result.events),
        "key_frames": list(result.key_frames),
        "success": bool(result.success.success),
        "score": float(result.success.score),
        "score_exact": str(Fraction(result.success.score).limit_denominator(10**9)),
        "step_cap_hit": result.step_cap_hit,
        "prompts": [
            {"created_frame": created[pid], "prompt": p.to_dict()}
            for pid, p in enumerate(result.prompt_table)
        ],
    }


def build_controller(policy_ref: str, task, rng_seed: int):
    """Resolve a policy reference: oracle, expert, random, or a checkpoint path."""
    if policy_ref == "oracle":
        return OracleController()
    if policy_ref == "expert":
        return ExpertController(task)
    if policy_ref == "random":
        return RandomController(np.random.default_rng(rng_seed))
    try:
        return PolicyController(load_policy(policy_ref))
    except (OSError, VisteerError) as exc:
        raise SessionError(f"cannot load policy {policy_ref!r}: {exc}") from exc


@dataclass
class SessionConfig:
    family: str
    ood: str = "none"
    seed: int = 0
    policy: str = "oracle"
    mode: str = "human_prompt"
    style: str = "crosshair"
    record_every: int = 1
    max_steps: int = STEP_CAP
    frame_period: float = 0.0

    def __post_init__(self):
        if self.mode not in SESSION_MODES:
            raise SessionError(f"unknown session mode {self.mode!r}")
        if self.record_every < 1:
            raise SessionError("record_every must be >= 1")


class Subscriber:
    """Per-connection outbox with drop-to-snapshot overflow behaviour."""

    def __init__(self, maxsize: int = 256):
        self.outbox: queue.Queue[dict | None] = queue.Queue(maxsize=maxsize)
        self.subscriptions: set[str] = set()
        self._needs_resync: set[str] = set()
        self._lock = threading.Lock()
        self.closed = False

    def offer(self, session_id: str, message: dict, snapshot: Callable[[], dict]) -> None:
        with self._lock:
            if self.closed or session_id not in self.subscriptions:
                return
            if session_id in self._needs_resync:
                try:
                    self.outbox.put_nowait(snapshot())
                except queue.Full:
                    return  # still backed up; stay in resync mode
                self._needs_resync.discard(session_id)
            try:
                self.outbox.put_nowait(message)
            except queue.Full:
                self._needs_resync.add(session_id)

    def attach(self, session_id: str, snapshot_msg: dict) -> None:
        """Subscribe and enqueue the snapshot atomically.

        Runs on the session worker, between frames, so the snapshot is
        ordered exactly before the frames that follow it.
        """
        with self._lock:
            if self.closed:
                return
            self.subscriptions.add(session_id)
            try:
                self.outbox.put_nowait(snapshot_msg)
            except queue.Full:
                self._needs_resync.add(session_id)

    def close(self) -> None:
        with self._lock:
            self.closed = True
        try:
            self.outbox.put_nowait(None)
        except queue.Full:  # sentinel may be dropped; pump also checks `closed`
            pass


class _Reply:
    def __init__(self):
        self._event = threading.Event()
        self.value: dict | None = None

    def set(self, value: dict) -> None:
        self.value = value
        self._event.set()

    def wait(self, timeout: float = COMMAND_TIMEOUT) -> dict:
        if not self._event.wait(timeout):
            return {"ok": False, "error": "timeout", "reason": "session worker unresponsive"}
        return self.value or {"ok": False, "error": "internal", "reason": "empty reply"}


@dataclass
class _Command:
    name: str
    payload: dict[str, Any]
    reply: _Reply = field(default_factory=_Reply)


class LiveSession:
    """One episode, advanced exclusively by its worker thread."""

    def __init__(self, session_id: str, cfg: SessionConfig, publish: Callable[[str, dict], None]):
        self.id = session_id
        self.cfg = cfg
        self._publish = publish
        try:
            state, task = generate_scene(cfg.family, ood=cfg.ood, seed=cfg.seed)
        except VisteerError as exc:
            raise SessionError(str(exc)) from exc
        self.task = task
        planner_mode = "human" if cfg.mode == "human_prompt" else "rule"
        self.planner = PlannerSession(task.instruction, mode=planner_mode, style=cfg.style)
        controller = build_controller(cfg.policy, task, cfg.seed)
        self.cam = CameraConfig()
        self.driver = EpisodeDriver(
            state,
            task,
            controller,
            self.planner,
            self.cam,
            max_steps=cfg.max_steps,
            record_frames=True,
        )
        self.status = "paused"
        self.commands: queue.Queue[_Command] = queue.Queue()
        self._pending_steps = 0
        self._closed = False
        self._lock = threading.Lock()
        self._last_subtask_index: int | None = None
        self._worker = threading.Thread(target=self._run, name=f"session-{session_id}", daemon=True)
        self._worker.start()

    # ---- public entry points (any thread) ----

    def submit(self, name: str, payload: dict[str, Any]) -> dict:
        if self._closed:
            return {"ok": False, "error": "not_found", "reason": "session closed"}
        cmd = _Command(name, payload)
        self.commands.put(cmd)
        return cmd.reply.wait()

    def snapshot(self) -> dict:
        """Current state as one resync message; safe from any thread."""
        with self._lock:
            frame_index = self.driver.frames_emitted - 1
            state = self.driver.state
            obs = self.driver.last_obs
            if obs is None:
                obs = render_observation(state, self.cam).overhead
            prompt = self.driver.active_prompt
            image = self.driver.active_prompt_image
            payload = {
                "type": "snapshot",
                "session": self.id,
                "frame_index": frame_index,
                "status": self.status,
                "mode": self.cfg.mode,
                "obs": encode_raster(obs),
                "prompt": None if prompt is None else prompt.to_dict(),
                "prompt_raster": None if image is None else encode_raster(image.raster),
                "gripper": self._gripper_dict(state),
                "subtask": self.planner.active_text(),
                "instruction": self.task.instruction,
                "family": self.task.family,
            }
        return payload

    def close(self) -> None:
        self._closed = True
        self.commands.put(_Command("__close__", {}))

    def join(self, timeout: float = 5.0) -> None:
        self._worker.join(timeout)

    # ---- worker internals ----

    def _run(self) -> None:
        while True:
            advancing = self._should_advance()
            try:
                cmd = self.commands.get_nowait() if advancing else self.commands.get(timeout=0.25)
            except queue.Empty:
                cmd = None
            if cmd is not None:
                if cmd.name == "__close__":
                    return
                cmd.reply.set(self._apply(cmd))
                continue
            if self._should_advance():
                self._advance_once()
                if self.cfg.frame_period > 0:
                    threading.Event().wait(self.cfg.frame_period)

    def _should_advance(self) -> bool:
        if self._closed or self.driver.done:
            return False
        return self.status == "running" or self._pending_steps > 0

    def _apply(self, cmd: _Command) -> dict:
        try:
            if cmd.name == "start":
                if self.driver.done:
                    return {"ok": False, "error": "done", "reason": "episode already finished"}
                self.status = "running"
                return {"ok": True, "status": self.status}
            if cmd.name == "pause":
                if self.status == "running":
                    self.status = "paused"
                self._pending_steps = 0
                return {"ok": True, "status": self.status}
            if cmd.name == "step":
                if self.status == "running":
                    return {"ok": False, "error": "running", "reason": "pause before stepping"}
                if self.driver.done:
                    return {"ok": False, "error": "done", "reason": "episode already finished"}
                count = int(cmd.payload.get("count", 1))
                if count < 1:
                    return {"ok": False, "error": "bad_request", "reason": "count must be >= 1"}
                for _ in range(count):
                    if self.driver.done:
                        break
                    self._advance_once()
                return {"ok": True, "frame_index": self.driver.frames_emitted - 1}
            if cmd.name == "submit_prompt":
                return self._apply_prompt(cmd.payload)
            if cmd.name == "subscribe":
                sub = cmd.payload["subscriber"]
                sub.attach(self.id, self.snapshot())
                return {"ok": True, "session": self.id}
            if cmd.name == "bind_policy":
                ref = cmd.payload.get("policy")
                if not isinstance(ref, str) or not ref:
                    return {"ok": False, "error": "bad_request", "reason": "policy ref required"}
                controller = build_controller(ref, self.task, self.cfg.seed)
                controller.reset()
                self.driver.controller = controller
                return {"ok": True, "policy": ref}
            return {"ok": False, "error": "bad_request", "reason": f"unknown command {cmd.name!r}"}
        except SessionError as exc:
            return {"ok": False, "error": "rejected", "reason": str(exc)}
        except VisteerError as exc:
            return {"ok": False, "error": "rejected", "reason": str(exc)}
        except Exception as exc:  # keep the worker alive whatever a command does
            return {"ok": False, "error": "internal", "reason": f"{type(exc).__name__}: {exc}"}

    def _apply_prompt(self, payload: dict) -> dict:
        if self.cfg.mode != "human_prompt":
            return {
                "ok": False,
                "error": "mode",
                "reason": "prompts can only be submitted in human_prompt mode",
            }
        if self.driver.done:
            return {"ok": False, "error": "done", "reason": "episode already finished"}
        prompt = prompt_from_wire(payload.get("prompt"))
        try:
            self.planner.submit_prompt(prompt, self.cam.width, self.cam.height)
        except VisteerError as exc:
            return {"ok": False, "error": "rejected", "reason": str(exc)}
        return {"ok": True, "applies_from_frame": self.driver.t}

    def _advance_once(self) -> None:
        with self._lock:
            update = self.driver.advance()
        if self._pending_steps > 0:
            self._pending_steps -= 1
        t = update.frame_index
        if t % self.cfg.record_every == 0 or self.driver.done:
            self._publish(self.id, self._frame_message(update))
        if update.event is not None:
            self._publish(
                self.id,
                {
                    "type": "event_fired",
                    "session": self.id,
                    "frame_index": t,
                    "phi_before": update.event.phi_before,
                    "phi_after": update.event.phi_after,
                    "kind": update.event.kind,
                },
            )
        if update.subtask_index != self._last_subtask_index:
            self._last_subtask_index = update.subtask_index
            self._publish(
                self.id,
                {
                    "type": "subtask_changed",
                    "session": self.id,
                    "frame_index": t,
                    "subtask_index": update.subtask_index,
                    "subtask": update.subtask_text,
                },
            )
        if self.driver.done:
            self.status = "done"
            result = self.driver.result()
            self._publish(
                self.id,
                {
                    "type": "done",
                    "session": self.id,
                    "frames": result.frames,
                    "success": bool(result.success.success),
                    "score": float(result.success.score),
                    "step_cap_hit": result.step_cap_hit,
                },
            )

    def _frame_message(self, update) -> dict:
        state = self.driver.last_state
        obs = self.driver.last_obs
        image = self.driver.active_prompt_image
        prompt = update.active_prompt
        return {
            "type": "frame",
            "session": self.id,
            "frame_index": update.frame_index,
            "obs": encode_raster(obs),
            "prompt": None if prompt is None else prompt.to_dict(),
            "prompt_raster": None if image is None else encode_raster(image.raster),
            "gripper": self._gripper_dict(state),
            "subtask": update.subtask_text,
            "event": update.event is not None,
            "is_key_frame": update.is_key_frame,
        }

    @staticmethod
    def _gripper_dict(state) -> dict:
        return {
            "x": float(state.gripper.position[0]),
            "y": float(state.gripper.position[1]),
            "closed": bool(state.gripper.closed),
            "held_object": state.gripper.held_object,
        }

    def result_dict(self) -> dict:
        if not self.driver.done:
            raise SessionError("episode still in progress")
        payload = rollout_result_dict(self.driver.result())
        payload["session"] = self.id
        return payload


class SessionManager:
    """Registry of live sessions plus the subscriber fan-out."""

    def __init__(self, *, queue_size: int = 256, max_sessions: int = 64):
        self.queue_size = queue_size
        self.max_sessions = max_sessions
        self._sessions: dict[str, LiveSession] = {}
        self._subscribers: list[Subscriber] = []
        self._lock = threading.Lock()
        self._ids = itertools.count(1)

    def create(self, cfg: SessionConfig) -> LiveSession:
        with self._lock:
            if len(self._sessions) >= self.max_sessions:
                raise SessionError(f"session limit {self.max_sessions} reached")
            session_id = f"s-{next(self._ids):04d}"
        session = LiveSession(session_id, cfg, self._broadcast)
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> LiveSession:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionError(f"unknown session {session_id!r}")
        return session

    def list_sessions(self) -> list[dict]:
        with self._lock:
            sessions = list(self._sessions.values())
        return [
            {
                "session": s.id,
                "family": s.task.family,
                "status": s.status,
                "mode": s.cfg.mode,
                "frame_index": s.driver.frames_emitted - 1,
            }
            for s in sessions
        ]

    def close_session(self, session_id: str) -> None:
        session = self.get(session_id)
        with self._lock:
            self._sessions.pop(session_id, None)
        session.close()
        session.join()

    def subscriber(self) -> Subscriber:
        sub = Subscriber(self.queue_size)
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def drop_subscriber(self, sub: Subscriber) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)
        sub.close()

    def subscribe(self, sub: Subscriber, session_id: str) -> dict:
        session = self.get(session_id)  # not-found check first
        # The worker performs the attach between frames, so the snapshot the
        # subscriber receives is ordered exactly before the frames after it.
        return session.submit("subscribe", {"subscriber": sub})

    def _broadcast(self, session_id: str, message: dict) -> None:
        with self._lock:
            subs = list(self._subscribers)
            session = self._sessions.get(session_id)
        if session is None:
            return
        for sub in subs:
            sub.offer(session_id, message, session.snapshot)

    def shutdown(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
            subs = list(self._subscribers)
            self._subscribers.clear()
        for session in sessions:
            session.close()
        for session in sessions:
            session.join()
        for sub in subs:
            sub.close()
