"""Dataset integrity validation.

Re-derives every invariant a consumer relies on instead of trusting the
writer: checksums, event arithmetic from the stored gate values, prompt
raster persistence between key frames, prompt geometry allowed for the
subtask verb in force, and grounding strings that match the active prompt
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, DecompositionError
from ..grounding import target_from_json
from ..planner.grammar import parse_subtask
from ..prompts import rasterize_prompt
from .episode import VERB_PROMPT_KIND, EpisodeRecord
from .shard import load_manifest, read_episode


@dataclass
class Violation:
    episode_id: int
    code: str
    detail: str

    def __str__(self) -> str:
        return f"episode {self.episode_id}: [{self.code}] {self.detail}"


@dataclass
class ValidationReport:
    episodes: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return f"{self.episodes} episodes, no violations"
        return f"{self.episodes} episodes, {len(self.violations)} violations"


def _check_counts(rec: EpisodeRecord, add) -> bool:
    T = rec.frames
    shapes_ok = (
        rec.phis.shape == (T,)
        and rec.prompt_ids.shape == (T,)
        and rec.obs.shape == (T, rec.height, rec.width, 3)
        and rec.prompt_rasters.shape == (T, rec.height, rec.width, 3)
    )
    if not shapes_ok:
        add("counts", "frame, action, gate, and raster counts disagree")
        return False
    if T == 0:
        add("counts", "episode has no frames")
        return False
    return True


def _check_events(rec: EpisodeRecord, add) -> None:
    derived = [
        t
        for t in range(1, rec.frames)
        if abs(float(rec.phis[t]) - float(rec.phis[t - 1])) > 0.5
    ]
    if derived != rec.events:
        add("events", f"stored events {rec.events} != gate-derived {derived}")
    if rec.key_frames != [0] + rec.events:
        add("key_frames", f"key frames {rec.key_frames} != [0] + events")
    for phi in np.unique(rec.phis):
        if phi not in (0.0, 1.0):
            add("gate", f"gate value {phi} is not binary")


def _check_prompts(rec: EpisodeRecord, add, allow_render_both: bool) -> None:
    key_set = set(rec.key_frames)
    first_seen: dict[int, int] = {}
    for t in range(rec.frames):
        pid = int(rec.prompt_ids[t])
        if pid >= 0 and pid not in first_seen:
            first_seen[pid] = t
        if t > 0 and pid != int(rec.prompt_ids[t - 1]):
            if (t - 1) not in key_set:
                add("persistence", f"prompt changed at frame {t} without a key frame at {t - 1}")

    if sorted(first_seen) != list(range(len(rec.prompts))):
        add("prompt_table", "prompt table does not match the frame stream")
        return

    for pid, record in enumerate(rec.prompts):
        if first_seen.get(pid) != record.created_frame:
            add(
                "prompt_table",
                f"prompt {pid} first active at {first_seen.get(pid)}, "
                f"recorded created_frame {record.created_frame}",
            )
        try:
            record.prompt.validate(rec.width, rec.height)
        except Exception as exc:
            add("prompt_geometry", f"prompt {pid}: {exc}")
            continue
        _check_discipline(rec, pid, record, add, allow_render_both)

    _check_raster_persistence(rec, first_seen, add)


def _check_discipline(rec, pid, record, add, allow_render_both: bool) -> None:
    prompt = record.prompt
    if prompt.render_both:
        if not allow_render_both:
            add("discipline", f"prompt {pid} renders both glyphs")
        return
    entry = rec.active_subtask_at(record.created_frame)
    if entry is None or entry.subtask is None:
        add("discipline", f"prompt {pid} created with no active subtask")
        return
    try:
        verb = parse_subtask(entry.subtask).verb
    except DecompositionError as exc:
        add("discipline", f"prompt {pid}: unparseable subtask {entry.subtask!r}: {exc}")
        return
    want = VERB_PROMPT_KIND[verb]
    if want == "point" and not (prompt.anchor is not None and prompt.box is None):
        add("discipline", f"prompt {pid} for verb {verb!r} must be anchor-only")
    if want == "box" and not (prompt.box is not None and prompt.anchor is None):
        add("discipline", f"prompt {pid} for verb {verb!r} must be box-only")


def _check_raster_persistence(rec: EpisodeRecord, first_seen: dict[int, int], add) -> None:
    # Within a segment the stored raster must be byte-identical to the one
    # frozen at the prompt's creation frame; outside any segment it must be
    # the plain observation.
    for pid, created in first_seen.items():
        frozen = rec.prompt_rasters[created]
        expected = rasterize_prompt(rec.obs[created], rec.prompts[pid].prompt).raster
        if not np.array_equal(frozen, expected):
            add("raster", f"prompt {pid} raster does not match its creation frame render")
    for t in range(rec.frames):
        pid = int(rec.prompt_ids[t])
        if pid >= 0:
            if not np.array_equal(rec.prompt_rasters[t], rec.prompt_rasters[first_seen[pid]]):
                add("persistence", f"frame {t} raster differs from its segment's frozen raster")
        else:
            if not np.array_equal(rec.prompt_rasters[t], rec.obs[t]):
                add("raster", f"frame {t} has no prompt but its raster is not the observation")


def _check_grounding(rec: EpisodeRecord, add) -> None:
    from .episode import grounding_for_prompt
    from ..grounding import target_to_json

    if len(rec.grounding) != len(rec.key_frames):
        add("grounding", f"{len(rec.grounding)} targets for {len(rec.key_frames)} key frames")
        return
    for kf, text in zip(rec.key_frames, rec.grounding):
        try:
            target_from_json(text)
        except ValueError as exc:
            add("grounding", f"key frame {kf}: {exc}")
            continue
        pid = int(rec.prompt_ids[kf])
        if pid < 0:
            add("grounding", f"key frame {kf} has no active prompt")
            continue
        expected = target_to_json(
            grounding_for_prompt(rec.prompts[pid].prompt, rec.width, rec.height, kf)
        )
        if text != expected:
            add("grounding", f"key frame {kf}: stored {text} != recomputed {expected}")


def validate_record(
    rec: EpisodeRecord, episode_id: int = 0, *, allow_render_both: bool = False
) -> list[Violation]:
    out: list[Violation] = []

    def add(code: str, detail: str) -> None:
        out.append(Violation(episode_id, code, detail))

    if not _check_counts(rec, add):
        return out
    _check_events(rec, add)
    _check_prompts(rec, add, allow_render_both)
    _check_grounding(rec, add)
    if rec.success and rec.score != 1.0:
        add("score", f"success flag set but score is {rec.score}")
    if not (0.0 <= rec.score <= 1.0):
        add("score", f"score {rec.score} outside [0, 1]")
    if rec.subtask_log:
        if rec.subtask_log[0].frame_index != 0:
            add("subtasks", "subtask log does not start at frame 0")
        frames = [e.frame_index for e in rec.subtask_log]
        if frames != sorted(frames):
            add("subtasks", "subtask log frames are not ordered")
    else:
        add("subtasks", "subtask log is empty")
    if rec.success and not np.array_equal(rec.actions[-1], np.zeros(3, dtype=np.float32)):
        add("actions", "successful episode does not end with a null action")
    return out


def validate_dataset(
    dataset_dir: str | Path,
    *,
    allow_render_both: bool = False,
    max_episodes: int | None = None,
) -> ValidationReport:
    manifest = load_manifest(dataset_dir)
    entries = manifest.episodes
    if max_episodes is not None:
        entries = entries[:max_episodes]
    report = ValidationReport(episodes=len(entries))
    for entry in entries:
        try:
            rec = read_episode(dataset_dir, entry)
        except DataError as exc:
            report.violations.append(Violation(entry.episode_id, "checksum", str(exc)))
            continue
        if rec.seed != entry.seed or rec.family != entry.family:
            report.violations.append(
                Violation(entry.episode_id, "manifest", "manifest metadata disagrees with header")
            )
        report.violations.extend(
            validate_record(rec, entry.episode_id, allow_render_both=allow_render_both)
        )
    return report
