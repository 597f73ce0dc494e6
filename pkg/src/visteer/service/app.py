"""FastAPI application exposing live sessions and the planner protocol.

Two transports share one session manager:

* a persistent WebSocket at ``/ws`` carrying JSON commands (``create``,
  ``start``, ``pause``, ``step``, ``submit_prompt``, ``bind_policy``,
  ``subscribe``, ``close``, ``list``) and pushed events (``frame``,
  ``event_fired``, ``subtask_changed``, ``done``, ``snapshot``);
* plain HTTP endpoints for snapshots, finished-rollout results, a
  synchronous programmatic rollout, and a request/response mirror of the
  external-planner message schemas.
"""

from __future__ import annotations

import asyncio
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Any

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from ..data.shard import iterate_episodes, load_manifest
from ..errors import (
    DataError,
    DecompositionError,
    ProtocolError,
    SessionError,
    VisteerError,
)
from ..planner.decide import advance as advance_plan
from ..planner.grammar import decompose
from ..planner.protocol import (
    build_decompose_response,
    build_detect_response,
    parse_decompose_request,
    parse_detect_request,
)
from ..planner.session import PlannerSession
from ..render import CameraConfig, render_observation
from ..rollout import EpisodeDriver
from ..sim.scenes import generate_scene
from ..sim.world import STEP_CAP
from .sessions import (
    PROTOCOL_VERSION,
    SessionConfig,
    SessionManager,
    build_controller,
    encode_raster,
    prompt_from_wire,
    rollout_result_dict,
)


@dataclass
class ServiceConfig:
    queue_size: int = 256
    max_sessions: int = 64
    expose_ground_truth: bool = False
    dataset_root: str | None = None


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    cfg = config or ServiceConfig()
    manager = SessionManager(queue_size=cfg.queue_size, max_sessions=cfg.max_sessions)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        manager.shutdown()

    app = FastAPI(title="visteer session service", version=str(PROTOCOL_VERSION), lifespan=lifespan)
    app.state.manager = manager
    app.state.config = cfg

    # ---- HTTP: health and session inspection ----

    @app.get("/health")
    def health() -> dict:
        return {"ok": True, "protocol_version": PROTOCOL_VERSION}

    @app.get("/sessions")
    def sessions() -> dict:
        return {"sessions": manager.list_sessions()}

    @app.get("/sessions/{session_id}")
    def session_snapshot(session_id: str) -> dict:
        try:
            return manager.get(session_id).snapshot()
        except SessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/sessions/{session_id}/result")
    def session_result(session_id: str) -> dict:
        try:
            session = manager.get(session_id)
        except SessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        try:
            return session.result_dict()
        except SessionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc

    # ---- HTTP: scene inspection for scripted drivers ----

    @app.get("/scene")
    def scene_info(family: str, ood: str = "none", seed: int = 0) -> dict:
        if not cfg.expose_ground_truth:
            raise HTTPException(status_code=403, detail="ground-truth endpoint disabled")
        try:
            state, task = generate_scene(family, ood=ood, seed=seed)
        except VisteerError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        obs = render_observation(state)
        target_key = (
            None if task.target_object_id is None else f"object:{task.target_object_id}"
        )
        return {
            "family": task.family,
            "instruction": task.instruction,
            "target_object_id": task.target_object_id,
            "target_key": target_key,
            "target_box": None
            if target_key is None
            else list(obs.gt_boxes[target_key]),
            "target_cell": None if task.target_cell is None else list(task.target_cell),
            "width": obs.width,
            "height": obs.height,
            "gt_boxes": {k: list(v) for k, v in obs.gt_boxes.items()},
            "gripper_px": list(obs.gripper_px),
        }

    # ---- HTTP: stored-episode fetch for replay ----

    @app.get("/episodes/{episode_id}")
    def episode(episode_id: str, stride: int = 1) -> dict:
        if cfg.dataset_root is None:
            raise HTTPException(status_code=403, detail="no dataset mounted")
        if stride < 1:
            raise HTTPException(status_code=422, detail="stride must be >= 1")
        try:
            load_manifest(cfg.dataset_root)
            for entry, rec in iterate_episodes(cfg.dataset_root):
                if str(entry.episode_id) != episode_id:
                    continue
                return {
                    "episode_id": episode_id,
                    "family": rec.family,
                    "instruction": rec.instruction,
                    "frames": rec.frames,
                    "width": rec.width,
                    "height": rec.height,
                    "events": list(rec.events),
                    "key_frames": list(rec.key_frames),
                    "prompt_ids": rec.prompt_ids[::stride].tolist(),
                    "prompts": [
                        {"created_frame": p.created_frame, "prompt": p.prompt.to_dict()}
                        for p in rec.prompts
                    ],
                    "grounding": list(rec.grounding),
                    "obs": [encode_raster(f) for f in rec.obs[::stride]],
                    "success": rec.success,
                }
        except DataError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        raise HTTPException(status_code=404, detail=f"unknown episode {episode_id!r}")

    # ---- HTTP: planner protocol mirror ----

    def _protocol_error(exc: ProtocolError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": "protocol", "field": exc.field_path, "message": str(exc)},
        )

    @app.post("/decompose")
    async def decompose_endpoint(body: dict) -> Any:
        try:
            instruction = parse_decompose_request(body)
        except ProtocolError as exc:
            return _protocol_error(exc)
        try:
            plan = decompose(instruction)
        except DecompositionError as exc:
            return JSONResponse(
                status_code=422,
                content={"error": "decomposition", "message": str(exc)},
            )
        return build_decompose_response([s.text for s in plan.subtasks])

    @app.post("/detect")
    async def detect_endpoint(body: dict) -> Any:
        try:
            request = parse_detect_request(body)
        except ProtocolError as exc:
            return _protocol_error(exc)
        try:
            plan = decompose(request["task"])
        except DecompositionError as exc:
            return JSONResponse(
                status_code=422,
                content={"error": "decomposition", "message": str(exc)},
            )
        texts = [s.text for s in plan.subtasks]
        if request["current_subtask"] not in texts:
            return _protocol_error(
                ProtocolError("subtask does not belong to the task", "current_subtask")
            )
        plan.cursor = texts.index(request["current_subtask"])
        decision = advance_plan(plan, request["summary"])
        return build_detect_response(decision)

    # ---- HTTP: synchronous programmatic rollout ----

    @app.post("/rollout")
    async def rollout_endpoint(body: dict) -> Any:
        family = body.get("family")
        if not isinstance(family, str):
            raise HTTPException(status_code=422, detail="family is required")
        mode = body.get("mode", "human_prompt")
        if mode not in ("human_prompt", "auto_planner"):
            raise HTTPException(status_code=422, detail=f"unknown mode {mode!r}")
        prompts = body.get("prompts", [])
        if not isinstance(prompts, list):
            raise HTTPException(status_code=422, detail="prompts must be an array")
        try:
            state, task = generate_scene(
                family, ood=body.get("ood", "none"), seed=int(body.get("seed", 0))
            )
            controller = build_controller(
                body.get("policy", "oracle"), task, int(body.get("seed", 0))
            )
        except VisteerError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        planner_mode = "human" if mode == "human_prompt" else "rule"
        session = PlannerSession(
            task.instruction, mode=planner_mode, style=body.get("style", "crosshair")
        )
        cam = CameraConfig()
        driver = EpisodeDriver(
            state,
            task,
            controller,
            session,
            cam,
            max_steps=int(body.get("max_steps", STEP_CAP)),
        )
        try:
            staged = sorted(
                ((int(p["frame"]), prompt_from_wire(p.get("prompt"))) for p in prompts),
                key=lambda fp: fp[0],
            )
        except (KeyError, TypeError, ValueError, SessionError) as exc:
            raise HTTPException(status_code=422, detail=f"malformed prompt entry: {exc}") from exc

        def run() -> dict:
            pending = list(staged)
            while not driver.done:
                while pending and pending[0][0] == driver.t:
                    _, prompt = pending.pop(0)
                    try:
                        session.submit_prompt(prompt, cam.width, cam.height)
                    except VisteerError as exc:
                        raise HTTPException(status_code=422, detail=str(exc)) from exc
                driver.advance()
            payload = rollout_result_dict(driver.result())
            payload["unapplied_prompts"] = len(pending)
            return payload

        return await asyncio.to_thread(run)

    # ---- WebSocket command/event channel ----

    async def _pump(ws: WebSocket, subscriber) -> None:
        try:
            while True:
                item = await asyncio.to_thread(subscriber.outbox.get)
                if item is None or subscriber.closed:
                    return
                await ws.send_json(item)
        except Exception:
            return

    def _handle_command(msg: dict, subscriber) -> dict:
        cmd = msg.get("cmd")
        cmd_id = msg.get("cmd_id")
        ack: dict[str, Any] = {"type": "ack", "cmd_id": cmd_id}

        def fail(error: str, reason: str) -> dict:
            ack.update(ok=False, error=error, reason=reason)
            return ack

        if cmd == "create":
            fields = {
                k: msg[k]
                for k in (
                    "family",
                    "ood",
                    "seed",
                    "policy",
                    "mode",
                    "style",
                    "record_every",
                    "max_steps",
                    "frame_period",
                )
                if k in msg
            }
            if "family" not in fields:
                return fail("bad_request", "family is required")
            try:
                session = manager.create(SessionConfig(**fields))
            except (SessionError, VisteerError) as exc:
                return fail("rejected", str(exc))
            except TypeError as exc:
                return fail("bad_request", str(exc))
            ack.update(ok=True, session=session.id, status=session.status)
            return ack
        if cmd == "list":
            ack.update(ok=True, sessions=manager.list_sessions())
            return ack
        if cmd == "ping":
            ack.update(ok=True)
            return ack

        session_id = msg.get("session")
        if not isinstance(session_id, str):
            return fail("bad_request", "session is required")
        if cmd == "subscribe":
            try:
                reply = manager.subscribe(subscriber, session_id)
            except SessionError as exc:
                return fail("not_found", str(exc))
            ack.update(reply)
            ack.setdefault("ok", False)
            return ack
        if cmd == "close":
            try:
                manager.close_session(session_id)
            except SessionError as exc:
                return fail("not_found", str(exc))
            ack.update(ok=True, session=session_id)
            return ack
        if cmd in ("start", "pause", "step", "submit_prompt", "bind_policy"):
            try:
                session = manager.get(session_id)
            except SessionError as exc:
                return fail("not_found", str(exc))
            reply = session.submit(cmd, msg)
            ack.update(reply)
            ack.setdefault("ok", False)
            return ack
        return fail("bad_request", f"unknown command {cmd!r}")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        subscriber = manager.subscriber()
        pump_task = asyncio.create_task(_pump(ws, subscriber))
        await ws.send_json(
            {"type": "hello", "protocol_version": PROTOCOL_VERSION, "service": "visteer"}
        )
        try:
            while True:
                msg = await ws.receive_json()
                if not isinstance(msg, dict):
                    await ws.send_json(
                        {"type": "ack", "cmd_id": None, "ok": False, "error": "bad_request",
                         "reason": "commands must be JSON objects"}
                    )
                    continue
                reply = await asyncio.to_thread(_handle_command, msg, subscriber)
                await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            manager.drop_subscriber(subscriber)
            pump_task.cancel()

    return app
