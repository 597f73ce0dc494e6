"""Annotated training episodes.

An EpisodeRecord is a recorded rollout plus everything the trainer needs:
per-frame actions and gate values, the symbolic prompt for every segment,
the frozen prompt raster that was active on each frame, and a quantized
grounding target for every key frame. Grounding targets are stored as
canonical JSON strings so that what the trainer decodes is byte-for-byte
what the annotator wrote.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import AnnotationError
from ..grounding import N_BINS, GroundingTarget, box_target, point_target, target_to_json
from ..prompts import VisualPrompt
from ..rollout import RolloutResult

FORMAT_VERSION = 1

# Which prompt geometry each subtask verb is allowed to carry.
VERB_PROMPT_KIND = {"pick": "point", "place": "box", "close": "point"}


@dataclass(frozen=True)
class PromptRecord:
    """A symbolic prompt plus the frame it first became active."""

    prompt: VisualPrompt
    created_frame: int

    def to_dict(self) -> dict:
        d = self.prompt.to_dict()
        d["created_frame"] = self.created_frame
        return d

    @staticmethod
    def from_dict(d: dict) -> "PromptRecord":
        body = {k: v for k, v in d.items() if k != "created_frame"}
        return PromptRecord(VisualPrompt.from_dict(body), int(d["created_frame"]))


@dataclass(frozen=True)
class SubtaskEntry:
    frame_index: int
    subtask: str | None
    target_object: str | None
    target_location: str | None

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "subtask": self.subtask,
            "target_object": self.target_object,
            "target_location": self.target_location,
        }

    @staticmethod
    def from_dict(d: dict) -> "SubtaskEntry":
        return SubtaskEntry(
            int(d["frame_index"]),
            d.get("subtask"),
            d.get("target_object"),
            d.get("target_location"),
        )


@dataclass
class EpisodeRecord:
    family: str
    instruction: str
    ood: str
    seed: int
    success: bool
    score: float
    width: int
    height: int
    actions: np.ndarray  # (T, 3) float32
    phis: np.ndarray  # (T,) float32
    events: list[int]
    key_frames: list[int]
    prompt_ids: np.ndarray  # (T,) int32, -1 = no active prompt
    prompts: list[PromptRecord]
    grounding: list[str]  # canonical JSON, one per key frame, same order
    subtask_log: list[SubtaskEntry]
    obs: np.ndarray  # (T, H, W, 3) uint8
    prompt_rasters: np.ndarray  # (T, H, W, 3) uint8

    @property
    def frames(self) -> int:
        return int(self.actions.shape[0])

    def grounding_targets(self) -> list[GroundingTarget]:
        from ..grounding import target_from_json

        return [
            target_from_json(text, frame_index=kf)
            for kf, text in zip(self.key_frames, self.grounding)
        ]

    def active_subtask_at(self, frame: int) -> SubtaskEntry | None:
        """Entry for the subtask in force at ``frame`` (last entry at or before it)."""
        best = None
        for entry in self.subtask_log:
            if entry.frame_index <= frame:
                best = entry
        return best


def _prompt_creation_frames(result: RolloutResult) -> list[int]:
    created = [-1] * len(result.prompt_table)
    for t in range(result.frames):
        pid = int(result.prompt_ids[t])
        if pid >= 0 and created[pid] < 0:
            created[pid] = t
    if any(c < 0 for c in created):
        raise AnnotationError("prompt table entry never appeared in the frame stream")
    return created


def grounding_for_prompt(
    prompt: VisualPrompt, width: int, height: int, frame: int, *, n_bins: int = N_BINS
) -> GroundingTarget:
    """Supervision target for one prompt: the box if it has one, else the point."""
    if prompt.box is not None:
        return box_target(prompt.box, width, height, frame_index=frame, n_bins=n_bins)
    if prompt.anchor is not None:
        return point_target(prompt.anchor, width, height, frame_index=frame, n_bins=n_bins)
    raise AnnotationError("prompt carries neither anchor nor box")


def annotate_episode(result: RolloutResult, seed: int) -> EpisodeRecord:
    """Turn a recorded rollout into a training episode.

    Raises AnnotationError when the rollout is internally inconsistent, e.g.
    a key frame without an active prompt on the following frame, or frame and
    action counts that disagree.
    """
    if result.obs_rasters is None or result.prompt_rasters is None:
        raise AnnotationError("rollout was not recorded with frames; rerun with record_frames")
    T = result.frames
    if result.actions.shape != (T, 3):
        raise AnnotationError(
            f"frame count {T} does not match action rows {result.actions.shape[0]}"
        )
    if list(result.key_frames) != [0] + list(result.events):
        raise AnnotationError("key frames must be frame 0 plus the event frames")

    created = _prompt_creation_frames(result)
    prompts = [
        PromptRecord(p, c) for p, c in zip(result.prompt_table, created)
    ]

    # A prompt staged at key frame k becomes active at k + 1 (frame 0 is the
    # exception: its prompt is already active on frame 0). The grounding
    # target for key frame k therefore describes the prompt active AT k,
    # i.e. the one the policy saw when the event fired.
    grounding: list[str] = []
    for kf in result.key_frames:
        pid = int(result.prompt_ids[kf])
        if pid < 0:
            raise AnnotationError(f"key frame {kf} has no active prompt")
        target = grounding_for_prompt(
            result.prompt_table[pid], result.width, result.height, kf
        )
        grounding.append(target_to_json(target))

    decisions_by_frame = {f: d for f, d in result.decisions}
    subtask_log: list[SubtaskEntry] = []
    for frame, _cursor, text in result.subtask_trace:
        d = decisions_by_frame.get(frame)
        subtask_log.append(
            SubtaskEntry(
                frame,
                text,
                None if d is None else d.target_object,
                None if d is None else d.target_location,
            )
        )

    return EpisodeRecord(
        family=result.task.family,
        instruction=result.task.instruction,
        ood=result.task.ood_tag,
        seed=seed,
        success=result.success.success,
        score=float(result.success.score),
        width=result.width,
        height=result.height,
        actions=np.ascontiguousarray(result.actions, dtype=np.float32),
        phis=np.ascontiguousarray(result.phis, dtype=np.float32),
        events=list(result.events),
        key_frames=list(result.key_frames),
        prompt_ids=np.ascontiguousarray(result.prompt_ids, dtype=np.int32),
        prompts=prompts,
        grounding=grounding,
        subtask_log=subtask_log,
        obs=np.ascontiguousarray(result.obs_rasters, dtype=np.uint8),
        prompt_rasters=np.ascontiguousarray(result.prompt_rasters, dtype=np.uint8),
    )
