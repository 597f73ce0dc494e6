"""In-memory training view over a shard dataset.

Episodes are loaded once; sampling returns batches of frames with the
prompt imagery the requested variant calls for, action chunks padded by
repeating the final real action, and grounding rows gated to key frames,
all frames, or off. Key frames are oversampled so the grounding loss sees
them more often than their share of the frame count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..grounding import N_BINS, target_from_json
from ..planner.grammar import decompose
from ..prompts import VisualPrompt, rasterize_prompt
from ..sim.types import TaskSpec, TaskStep
from ..variants import VariantSpec, get_variant
from .episode import EpisodeRecord, grounding_for_prompt
from .shard import iterate_episodes, load_manifest

KEY_FRAME_OVERSAMPLE = 2.0
IGNORE_BIN = -100

_CELL_RE = re.compile(r"line (\d+), column (\d+)")


def task_stub(family: str, instruction: str) -> TaskSpec:
    """Reconstruct enough of a TaskSpec to tokenize an instruction."""
    plan = decompose(instruction)
    steps = tuple(TaskStep(s.verb, s.object_noun, s.location_noun) for s in plan.subtasks)
    cell = None
    if family == "grid_place":
        m = _CELL_RE.search(instruction)
        if m is None:
            raise DataError(f"grid instruction without a cell: {instruction!r}")
        cell = (int(m.group(1)) - 1, int(m.group(2)) - 1)
    return TaskSpec(
        family=family,
        instruction=instruction,
        steps=steps,
        target_object_id=-1,
        target_cell=cell,
    )


def static_prompt_for(rec: EpisodeRecord, style: str) -> VisualPrompt:
    """Single prompt carrying the episode's first anchor and first box."""
    anchor = next((p.prompt.anchor for p in rec.prompts if p.prompt.anchor is not None), None)
    box = next((p.prompt.box for p in rec.prompts if p.prompt.box is not None), None)
    return VisualPrompt(
        anchor=anchor,
        box=box,
        style=style,
        render_both=anchor is not None and box is not None,
    )


@dataclass
class TrainBatch:
    obs: np.ndarray  # (B, H, W, 3) uint8
    prompt: np.ndarray | None  # (B, H, W, 3) uint8, None for prompt_mode "none"
    tokens: np.ndarray  # (B, L) int64
    chunk: np.ndarray  # (B, n, 3) float32
    grounding: np.ndarray  # (B, 4) int64, IGNORE_BIN where unsupervised
    grounding_mask: np.ndarray  # (B,) float32, 1 where the row is supervised


@dataclass
class _EpisodeView:
    obs: np.ndarray
    prompt_ids: np.ndarray
    frame_prompts: list[np.ndarray | None]  # resolved separate-image raster per frame
    overlay_prompts: list[VisualPrompt | None]  # symbolic prompt per frame
    tokens: np.ndarray
    real_actions: np.ndarray  # (T-1, 3)
    ground_rows: np.ndarray  # (T-1, 4) int64
    ground_mask: np.ndarray  # (T-1,) float32
    is_key: np.ndarray  # (T-1,) bool


def _ground_row(target, n_coords: int = 4) -> np.ndarray:
    row = np.full(n_coords, IGNORE_BIN, dtype=np.int64)
    row[: len(target.bins)] = target.bins
    return row


def _shift_image(img: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Translate an image by whole pixels, filling exposed area with the
    corner colour (the renderer paints a uniform backdrop)."""
    if sx == 0 and sy == 0:
        return img
    h, w = img.shape[:2]
    out = np.empty_like(img)
    out[:] = img[0, 0]
    x0, x1 = max(sx, 0), min(w + sx, w)
    y0, y1 = max(sy, 0), min(h + sy, h)
    if x0 < x1 and y0 < y1:
        out[y0:y1, x0:x1] = img[y0 - sy : y1 - sy, x0 - sx : x1 - sx]
    return out


def _bound_shift(prompt: VisualPrompt, sx: int, sy: int, w: int, h: int) -> tuple[int, int]:
    """Clamp a shift so every prompt coordinate stays inside the frame."""
    xs = []
    ys = []
    if prompt.anchor is not None:
        xs.append(prompt.anchor[0])
        ys.append(prompt.anchor[1])
    if prompt.box is not None:
        x1, y1, x2, y2 = prompt.box
        xs.extend([x1, x2])
        ys.extend([y1, y2])
    if xs:
        sx = int(np.clip(sx, -min(xs), w - 1 - max(xs)))
        sy = int(np.clip(sy, -min(ys), h - 1 - max(ys)))
    return sx, sy


def _shift_prompt(prompt: VisualPrompt, sx: int, sy: int) -> VisualPrompt:
    anchor = prompt.anchor
    if anchor is not None:
        anchor = (anchor[0] + sx, anchor[1] + sy)
    box = prompt.box
    if box is not None:
        box = (box[0] + sx, box[1] + sy, box[2] + sx, box[3] + sy)
    return dc_replace(prompt, anchor=anchor, box=box)


class TrainDataset:
    """Frame-level sampler over one generated dataset directory."""

    def __init__(
        self,
        dataset_dir: str | Path,
        variant: str | VariantSpec = "full",
        *,
        gate: str | None = None,
        instruction_length: int = 5,
        chunk_size: int = 16,
        n_bins: int = N_BINS,
        action_scale: tuple[float, float, float] = (20.0, 20.0, 1.0),
        augment_shift: int = 0,
        token_dropout: float = 0.0,
        max_episodes: int | None = None,
    ):
        self.spec = variant if isinstance(variant, VariantSpec) else get_variant(variant)
        self.gate = gate if gate is not None else self.spec.gate
        if self.gate not in ("key_frames", "all_frames", "off"):
            raise ConfigError(f"unknown grounding gate {self.gate!r}")
        if augment_shift < 0:
            raise ConfigError("augment_shift must be >= 0")
        if not 0.0 <= token_dropout < 1.0:
            raise ConfigError("token_dropout must lie in [0, 1)")
        self.chunk_size = chunk_size
        self.n_bins = n_bins
        self.augment_shift = int(augment_shift)
        self.token_dropout = float(token_dropout)
        self.action_scale = tuple(float(s) for s in action_scale)
        self._scale_row = np.array(self.action_scale, dtype=np.float32)
        self.manifest = load_manifest(dataset_dir)
        self.width = self.height = None
        self._episodes: list[_EpisodeView] = []
        for _entry, rec in iterate_episodes(dataset_dir):
            if max_episodes is not None and len(self._episodes) >= max_episodes:
                break
            self._episodes.append(self._build_view(rec, instruction_length))
            if self.width is None:
                self.width, self.height = rec.width, rec.height
        if not self._episodes:
            raise DataError(f"dataset {dataset_dir} holds no episodes")

        index = []
        weights = []
        for ep_idx, view in enumerate(self._episodes):
            for t in range(view.real_actions.shape[0]):
                index.append((ep_idx, t))
                weights.append(KEY_FRAME_OVERSAMPLE if view.is_key[t] else 1.0)
        self._index = np.array(index, dtype=np.int64)
        w = np.array(weights, dtype=np.float64)
        self._probs = w / w.sum()

    @property
    def episodes(self) -> int:
        return len(self._episodes)

    @property
    def frames(self) -> int:
        return int(self._index.shape[0])

    def training_seeds(self) -> set[int]:
        return set(self.manifest.training_seeds)

    def _build_view(self, rec: EpisodeRecord, instruction_length: int) -> _EpisodeView:
        from ..policy import encode_instruction

        T = rec.frames
        if T < 2:
            raise DataError("episode too short to supervise")
        stub = task_stub(rec.family, rec.instruction)
        tokens = np.array(encode_instruction(stub, instruction_length), dtype=np.int64)
        real_actions = np.ascontiguousarray(rec.actions[: T - 1], dtype=np.float32)

        if self.spec.static:
            static = static_prompt_for(rec, self.spec.style)
            static_raster = rasterize_prompt(rec.obs[0], static).raster
            frame_prompts: list[np.ndarray | None] = [static_raster] * T
            overlay_prompts: list[VisualPrompt | None] = [static] * T
            active = [static] * T
        else:
            cache: dict[int, np.ndarray] = {}
            styled: dict[int, VisualPrompt] = {}
            for pid, pr in enumerate(rec.prompts):
                styled[pid] = dc_replace(pr.prompt, style=self.spec.style)
                cache[pid] = rasterize_prompt(rec.obs[pr.created_frame], styled[pid]).raster
            frame_prompts = []
            overlay_prompts = []
            active = []
            for t in range(T):
                pid = int(rec.prompt_ids[t])
                frame_prompts.append(cache.get(pid))
                overlay_prompts.append(styled.get(pid))
                active.append(styled.get(pid))

        key_set = set(rec.key_frames)
        stored = {kf: text for kf, text in zip(rec.key_frames, rec.grounding)}
        ground_rows = np.full((T - 1, 4), IGNORE_BIN, dtype=np.int64)
        ground_mask = np.zeros(T - 1, dtype=np.float32)
        is_key = np.zeros(T - 1, dtype=bool)
        for t in range(T - 1):
            is_key[t] = t in key_set
            if self.gate == "off":
                continue
            if self.gate == "key_frames" and t not in key_set:
                continue
            prompt = active[t]
            if prompt is None:
                continue
            if not self.spec.static and t in key_set and self.n_bins == N_BINS:
                # the canonical resolution can reuse the stored strings verbatim
                target = target_from_json(stored[t], frame_index=t)
            else:
                target = grounding_for_prompt(
                    prompt, rec.width, rec.height, t, n_bins=self.n_bins
                )
            ground_rows[t] = _ground_row(target)
            ground_mask[t] = 1.0

        return _EpisodeView(
            obs=rec.obs,
            prompt_ids=rec.prompt_ids,
            frame_prompts=frame_prompts,
            overlay_prompts=overlay_prompts,
            tokens=tokens,
            real_actions=real_actions,
            ground_rows=ground_rows,
            ground_mask=ground_mask,
            is_key=is_key,
        )

    def _chunk(self, view: _EpisodeView, t: int) -> np.ndarray:
        n = self.chunk_size
        avail = view.real_actions[t : t + n]
        if avail.shape[0] < n:
            pad = np.repeat(avail[-1:], n - avail.shape[0], axis=0)
            avail = np.concatenate([avail, pad], axis=0)
        return avail * self._scale_row

    def sample(self, rng: np.random.Generator, batch_size: int) -> TrainBatch:
        picks = rng.choice(self._index.shape[0], size=batch_size, p=self._probs)
        shifts = None
        if self.augment_shift:
            s = self.augment_shift
            shifts = rng.integers(-s, s + 1, size=(batch_size, 2))
        batch = self.gather([tuple(self._index[i]) for i in picks], shifts=shifts)
        if self.token_dropout > 0.0:
            # blank whole instruction rows so the policy cannot lean on
            # language alone; visual context must carry those samples
            drop = rng.random(batch_size) < self.token_dropout
            batch.tokens[drop] = 0
        return batch

    def gather(
        self, picks: list[tuple[int, int]], shifts: np.ndarray | None = None
    ) -> TrainBatch:
        obs = []
        prompts = []
        tokens = []
        chunks = []
        grounds = []
        gmask = []
        for row, (ep_idx, t) in enumerate(picks):
            view = self._episodes[int(ep_idx)]
            t = int(t)
            frame = view.obs[t]
            sym = view.overlay_prompts[t]
            sx = sy = 0
            if shifts is not None:
                sx, sy = int(shifts[row][0]), int(shifts[row][1])
                if sym is not None:
                    sx, sy = _bound_shift(sym, sx, sy, self.width, self.height)
            if self.spec.prompt_mode == "direct_overlay":
                if sym is not None:
                    frame = rasterize_prompt(frame, sym).raster
                obs.append(_shift_image(frame, sx, sy))
            elif self.spec.prompt_mode == "separate_image":
                obs.append(_shift_image(frame, sx, sy))
                p = view.frame_prompts[t]
                prompts.append(_shift_image(frame if p is None else p, sx, sy))
            else:
                obs.append(_shift_image(frame, sx, sy))
            tokens.append(view.tokens)
            chunks.append(self._chunk(view, t))
            if (sx or sy) and view.ground_mask[t] > 0 and sym is not None:
                # a translated view needs translated bin targets
                target = grounding_for_prompt(
                    _shift_prompt(sym, sx, sy), self.width, self.height, t, n_bins=self.n_bins
                )
                grounds.append(_ground_row(target))
            else:
                grounds.append(view.ground_rows[t])
            gmask.append(view.ground_mask[t])
        return TrainBatch(
            obs=np.stack(obs),
            prompt=np.stack(prompts) if self.spec.prompt_mode == "separate_image" else None,
            tokens=np.stack(tokens),
            chunk=np.stack(chunks).astype(np.float32),
            grounding=np.stack(grounds),
            grounding_mask=np.array(gmask, dtype=np.float32),
        )
