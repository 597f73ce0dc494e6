"""Demonstration dataset generation.

Runs the scripted expert with the planner in the loop, annotates each
successful rollout, and streams it into shards. Episodes are balanced
across the per-family conditions (target color, category, grid cell, or
carried object) by walking a deterministic seed stream and skipping scenes
whose condition already met its quota.

Failed or inconsistent rollouts are discarded with a reason; if more than
MAX_DISCARD_FRACTION of attempts are discarded the run aborts, since that
points at a generator or expert defect rather than bad luck.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import AnnotationError, DataError, VisteerError
from ..planner import PlannerSession
from ..rollout import ExpertController, run_episode
from ..sim import FAMILIES, generate_scene, load_registry
from ..sim.types import TaskSpec, WorldState
from .episode import annotate_episode
from .shard import DatasetManifest, ShardWriter

MAX_DISCARD_FRACTION = 0.2

DEFAULT_COUNTS = {
    "attribute_pick": 200,
    "sorting": 150,
    "grid_place": 200,
    "pnp_close": 150,
}


def condition_key(state: WorldState, task: TaskSpec) -> str:
    """The attribute this episode should be balanced over within its family."""
    if task.family == "attribute_pick":
        return state.object_by_id(task.target_object_id).color
    if task.family == "sorting":
        return state.object_by_id(task.target_object_id).category or "unknown"
    if task.family == "grid_place":
        return f"cell{task.target_cell[0]}{task.target_cell[1]}"
    if task.family == "pnp_close":
        return task.steps[0].object_noun
    return "all"


@dataclass
class GenerationStats:
    attempted: int = 0
    kept: int = 0
    discard_reasons: Counter = field(default_factory=Counter)

    @property
    def discarded(self) -> int:
        return self.attempted - self.kept

    def discard_fraction(self) -> float:
        return self.discarded / self.attempted if self.attempted else 0.0


def _attempt(family: str, ood: str, seed: int, max_steps: int | None):
    state, task = generate_scene(family, ood=ood, seed=seed)
    session = PlannerSession(task.instruction, mode="rule")
    controller = ExpertController(task)
    kwargs = {} if max_steps is None else {"max_steps": max_steps}
    result = run_episode(
        state, task, controller, session, record_frames=True, **kwargs
    )
    return state, task, result


def generate_dataset(
    out_dir: str | Path,
    *,
    counts: dict[str, int] | None = None,
    ood: str = "none",
    seed: int = 0,
    max_steps: int | None = None,
    progress=None,
) -> DatasetManifest:
    """Generate a balanced demo dataset and write it under ``out_dir``.

    ``counts`` maps family name to episode count; families absent from the
    mapping are skipped. Seeds are drawn from a deterministic stream offset
    by ``seed`` so two runs with the same arguments produce identical
    datasets.
    """
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    for family in counts:
        if family not in FAMILIES:
            raise DataError(f"unknown task family {family!r}")

    writer = ShardWriter(out_dir)
    stats = GenerationStats()
    for family, total in counts.items():
        _generate_family(writer, stats, family, total, ood, seed, max_steps, progress)
        if stats.attempted and stats.discard_fraction() > MAX_DISCARD_FRACTION:
            raise DataError(
                f"discard rate {stats.discard_fraction():.0%} exceeds "
                f"{MAX_DISCARD_FRACTION:.0%}: {dict(stats.discard_reasons)}"
            )

    config = {
        "counts": counts,
        "ood": ood,
        "seed": seed,
        "max_steps": max_steps,
    }
    return writer.finalize(
        config=config,
        registry=load_registry(),
        discarded={
            "count": stats.discarded,
            "reasons": dict(stats.discard_reasons),
        },
    )


def _generate_family(
    writer: ShardWriter,
    stats: GenerationStats,
    family: str,
    total: int,
    ood: str,
    seed: int,
    max_steps: int | None,
    progress,
) -> None:
    # Probe one scene per fresh seed to learn the condition, so quotas can
    # be exact rather than whatever the seed stream happened to produce.
    quota: dict[str, int] = {}
    kept_per_condition: Counter = Counter()
    kept = 0
    # Stable per-family offset keeps seed streams disjoint across families.
    next_seed = (seed * 1_000_003 + zlib.crc32(family.encode()) % 7919) % (2**31)

    # First pass over a small window to enumerate conditions.
    conditions: set[str] = set()
    for probe in range(64):
        state, task = generate_scene(family, ood=ood, seed=next_seed + probe)
        conditions.add(condition_key(state, task))
    per = total // len(conditions)
    remainder = total - per * len(conditions)
    for i, cond in enumerate(sorted(conditions)):
        quota[cond] = per + (1 if i < remainder else 0)

    offset = 0
    while kept < total:
        ep_seed = next_seed + offset
        offset += 1
        if offset > 200 * total + 1000:
            raise DataError(f"{family}: could not fill quotas after {offset} seeds")
        state, task = generate_scene(family, ood=ood, seed=ep_seed)
        cond = condition_key(state, task)
        if kept_per_condition[cond] >= quota.get(cond, 0):
            continue
        stats.attempted += 1
        try:
            state, task, result = _attempt(family, ood, ep_seed, max_steps)
        except VisteerError as exc:
            stats.discard_reasons[type(exc).__name__] += 1
            continue
        if not result.success.success:
            stats.discard_reasons["task_failed"] += 1
            continue
        if result.step_cap_hit:
            stats.discard_reasons["step_cap"] += 1
            continue
        if result.faults:
            stats.discard_reasons["planner_fault"] += 1
            continue
        try:
            record = annotate_episode(result, ep_seed)
        except AnnotationError:
            stats.discard_reasons["annotation"] += 1
            continue
        writer.add(record)
        stats.kept += 1
        kept += 1
        kept_per_condition[cond] += 1
        if progress is not None:
            progress(family, kept, total)
