"""Evaluation: seeded suites, exact-arithmetic aggregation, ablation grid.

Success rates are kept as exact fractions from the moment trial scores are
collected until the report is rendered; rounding to one decimal happens
exactly once, with half-up semantics, so 47.25 displays as 47.3 and a mean
of printed one-decimal rates reproduces hand-computed table averages.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ConfigError, DivergenceError, VisteerError
from .planner import PlannerSession
from .policy import VisuomotorPolicy, load_policy
from .render import CameraConfig
from .rollout import OracleController, PolicyController, run_episode
from .sim import FAMILIES, OOD_TAGS, generate_scene
from .variants import ABLATION_GRID, VariantSpec, get_variant

RateLike = "Fraction | str | int | float"


def as_rate(value) -> Fraction:
    """Exact fraction from a rate given as Fraction, decimal string, int, or float.

    Decimal strings ("66.7") convert exactly, so printed one-decimal rates
    can be averaged without picking up binary noise.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a rate")


def mean_rate(values: Iterable) -> Fraction:
    items = [as_rate(v) for v in values]
    if not items:
        raise ValueError("mean of an empty rate list")
    return sum(items, Fraction(0)) / len(items)


def display_rate(value: Fraction, places: int = 1) -> str:
    """Round half-up to ``places`` decimals, as a string.

    Built on Decimal because round() rounds half-to-even: round(47.25, 1)
    gives 47.2, while success tables use 47.3.
    """
    quantum = Decimal(1).scaleb(-places)
    d = Decimal(value.numerator) / Decimal(value.denominator)
    return str(d.quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class EvalCondition:
    family: str
    ood: str = "none"

    def label(self) -> str:
        return f"{self.family}/{self.ood}"


@dataclass
class EvalSuite:
    """A named set of seeded trials, disjoint from the training seeds."""

    name: str
    conditions: tuple[EvalCondition, ...]
    trials: int = 50
    seed_base: int = 10_000_000
    training_seeds: frozenset = frozenset()

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        for cond in self.conditions:
            if cond.family not in FAMILIES:
                raise ConfigError(f"unknown family {cond.family!r}")
            if cond.ood not in OOD_TAGS[cond.family]:
                raise ConfigError(
                    f"family {cond.family!r} has no condition {cond.ood!r}"
                )
        clash = sorted(set(self.all_seeds()) & set(self.training_seeds))
        if clash:
            raise ConfigError(
                f"evaluation seeds overlap training seeds: {clash[:5]}"
                + ("..." if len(clash) > 5 else "")
            )

    def seeds_for(self, index: int) -> list[int]:
        start = self.seed_base + index * max(self.trials, 1000)
        return [start + t for t in range(self.trials)]

    def all_seeds(self) -> list[int]:
        out = []
        for i in range(len(self.conditions)):
            out.extend(self.seeds_for(i))
        return out

    def jobs(self) -> list[tuple[EvalCondition, int]]:
        out = []
        for i, cond in enumerate(self.conditions):
            out.extend((cond, seed) for seed in self.seeds_for(i))
        return sorted(out, key=lambda j: (j[0].family, j[0].ood, j[1]))

    def fingerprint_payload(self) -> dict:
        return {
            "name": self.name,
            "conditions": [c.label() for c in self.conditions],
            "trials": self.trials,
            "seed_base": self.seed_base,
        }


def suite_from_tags(
    name: str,
    families: Sequence[str],
    oods: Sequence[str] | None = None,
    *,
    trials: int = 50,
    seed_base: int = 10_000_000,
    training_seeds: Iterable[int] = (),
) -> EvalSuite:
    conditions = []
    for family in families:
        tags = oods if oods is not None else OOD_TAGS[family]
        for tag in tags:
            if tag in OOD_TAGS[family]:
                conditions.append(EvalCondition(family, tag))
    return EvalSuite(
        name,
        tuple(conditions),
        trials=trials,
        seed_base=seed_base,
        training_seeds=frozenset(training_seeds),
    )


@dataclass
class TrialOutcome:
    condition: EvalCondition
    seed: int
    score: Fraction
    success: bool
    frames: int
    step_cap_hit: bool


@dataclass
class ConditionResult:
    condition: EvalCondition
    trials: int
    successes: int
    mean_score: Fraction

    @property
    def rate(self) -> Fraction:
        return self.mean_score * 100

    def to_dict(self) -> dict:
        return {
            "family": self.condition.family,
            "ood": self.condition.ood,
            "trials": self.trials,
            "successes": self.successes,
            "rate": display_rate(self.rate),
            "rate_exact": [self.rate.numerator, self.rate.denominator],
        }


@dataclass
class EvalReport:
    suite: str
    fingerprint: str
    conditions: list[ConditionResult]
    trial_log: list[TrialOutcome] = field(default_factory=list)

    def aggregate_rate(self) -> Fraction:
        return mean_rate([c.rate for c in self.conditions])

    def condition(self, family: str, ood: str = "none") -> ConditionResult:
        for c in self.conditions:
            if c.condition.family == family and c.condition.ood == ood:
                return c
        raise KeyError(f"no condition {family}/{ood} in report")

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "fingerprint": self.fingerprint,
            "conditions": [c.to_dict() for c in self.conditions],
            "aggregate_rate": display_rate(self.aggregate_rate()),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        rows = [("condition", "trials", "succ", "rate")]
        for c in self.conditions:
            rows.append(
                (c.condition.label(), str(c.trials), str(c.successes), display_rate(c.rate))
            )
        rows.append(("average", "", "", display_rate(self.aggregate_rate())))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return f"suite: {self.suite}  fingerprint: {self.fingerprint}\n" + "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["suite", "family", "ood", "trials", "successes", "rate"])
        for c in self.conditions:
            writer.writerow(
                [
                    self.suite,
                    c.condition.family,
                    c.condition.ood,
                    c.trials,
                    c.successes,
                    display_rate(c.rate),
                ]
            )
        writer.writerow([self.suite, "average", "", "", "", display_rate(self.aggregate_rate())])
        return buf.getvalue()


class OracleRunner:
    """Scripted-controller trials driven by the rule-based planner."""

    name = "oracle"

    def __init__(self, *, backend: str = "ground_truth", style: str = "crosshair"):
        self.backend = backend
        self.style = style
        self.cam = CameraConfig()

    def fingerprint_payload(self) -> dict:
        return {"runner": "oracle", "backend": self.backend, "style": self.style}

    def run(self, condition: EvalCondition, seed: int) -> TrialOutcome:
        state, task = generate_scene(condition.family, ood=condition.ood, seed=seed)
        session = PlannerSession(task.instruction, backend=self.backend, style=self.style)
        result = run_episode(state, task, OracleController(), session, self.cam)
        return TrialOutcome(
            condition,
            seed,
            Fraction(result.success.score),
            result.success.success,
            result.frames,
            result.step_cap_hit,
        )


class PolicyRunner:
    """Checkpoint-driven trials; the variant fixes prompting and planning."""

    def __init__(
        self,
        checkpoint: "str | Path | VisuomotorPolicy",
        variant: "str | VariantSpec" = "full",
        *,
        cam: CameraConfig | None = None,
    ):
        self.spec = variant if isinstance(variant, VariantSpec) else get_variant(variant)
        if isinstance(checkpoint, VisuomotorPolicy):
            self.model = checkpoint
            self.checkpoint_label = "<in-memory>"
        else:
            self.model = load_policy(checkpoint)
            self.checkpoint_label = str(checkpoint)
        self.cam = cam or CameraConfig()
        self.name = f"policy:{self.spec.name}"
        if self.model.cfg.prompt_mode != self.spec.prompt_mode:
            raise ConfigError(
                f"checkpoint prompt mode {self.model.cfg.prompt_mode!r} does not "
                f"match variant {self.spec.name!r} ({self.spec.prompt_mode!r})"
            )
        if self.model.cfg.image_size != self.cam.width:
            raise ConfigError(
                f"checkpoint expects {self.model.cfg.image_size}px rasters, "
                f"camera renders {self.cam.width}px"
            )

    def fingerprint_payload(self) -> dict:
        return {
            "runner": "policy",
            "variant": self.spec.name,
            "checkpoint": self.checkpoint_label,
            "config_hash": self.model.cfg.config_hash(),
        }

    def run(self, condition: EvalCondition, seed: int) -> TrialOutcome:
        state, task = generate_scene(condition.family, ood=condition.ood, seed=seed)
        mode = "static" if self.spec.static else "rule"
        session = PlannerSession(task.instruction, mode=mode, style=self.spec.style)
        result = run_episode(state, task, PolicyController(self.model), session, self.cam)
        return TrialOutcome(
            condition,
            seed,
            Fraction(result.success.score),
            result.success.success,
            result.frames,
            result.step_cap_hit,
        )


def _fingerprint(suite: EvalSuite, runner) -> str:
    payload = {"suite": suite.fingerprint_payload(), "runner": runner.fingerprint_payload()}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_suite(runner, suite: EvalSuite, *, workers: int = 1, keep_trials: bool = False) -> EvalReport:
    """Run every trial in the suite and aggregate per condition.

    Trials are totally ordered by (family, ood, seed); with multiple workers
    the outcomes are collected back into that order, so reports are
    byte-identical regardless of parallelism.
    """
    jobs = suite.jobs()
    if workers <= 1:
        outcomes = [runner.run(cond, seed) for cond, seed in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda j: runner.run(*j), jobs))

    by_condition: dict[EvalCondition, list[TrialOutcome]] = {}
    for outcome in outcomes:
        by_condition.setdefault(outcome.condition, []).append(outcome)
    results = []
    for cond in suite.conditions:
        trials = by_condition.get(cond, [])
        results.append(
            ConditionResult(
                condition=cond,
                trials=len(trials),
                successes=sum(1 for t in trials if t.success),
                mean_score=mean_rate([t.score for t in trials]),
            )
        )
    results.sort(key=lambda r: (r.condition.family, r.condition.ood))
    return EvalReport(
        suite=suite.name,
        fingerprint=_fingerprint(suite, runner),
        conditions=results,
        trial_log=outcomes if keep_trials else [],
    )


# Mean success rates reported for the full-scale reference system. They sit
# alongside the desk-scale numbers in ablation tables for orientation; the
# desk-scale grid is expected to reproduce the ordering, not the magnitudes.
REFERENCE_MEANS = {
    "full": "53.8",
    "no_grounding": "49.4",
    "all_frame_grounding": "49.5",
    "point": "47.3",
    "direct_overlay": "50.8",
    "no_decomposition": None,  # no reference value reported
}


@dataclass
class AblationCell:
    variant: str
    rate: Fraction | None
    failed: bool = False
    detail: str = ""

    def display(self) -> str:
        if self.failed or self.rate is None:
            return "failed"
        return display_rate(self.rate)


@dataclass
class AblationReport:
    cells: list[AblationCell]
    reference: dict = field(default_factory=lambda: dict(REFERENCE_MEANS))

    def cell(self, variant: str) -> AblationCell:
        for c in self.cells:
            if c.variant == variant:
                return c
        raise KeyError(variant)

    def to_dict(self) -> dict:
        return {
            "cells": [
                {
                    "variant": c.variant,
                    "rate": None if c.rate is None else display_rate(c.rate),
                    "failed": c.failed,
                    "detail": c.detail,
                    "reference": self.reference.get(c.variant),
                }
                for c in self.cells
            ]
        }

    def to_text(self) -> str:
        rows = [("variant", "rate", "reference")]
        for c in self.cells:
            ref = self.reference.get(c.variant)
            rows.append((c.variant, c.display(), "-" if ref is None else ref))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def run_ablation_grid(
    evaluate: Callable[[str], Fraction],
    variants: Sequence[str] = ABLATION_GRID,
) -> AblationReport:
    """Evaluate each variant, tolerating per-cell failures.

    ``evaluate`` maps a variant name to its mean success rate; a
    DivergenceError (or any package error) marks that cell failed and the
    grid moves on.
    """
    cells = []
    for variant in variants:
        get_variant(variant)
        try:
            rate = evaluate(variant)
        except (DivergenceError, VisteerError) as exc:
            cells.append(AblationCell(variant, None, failed=True, detail=str(exc)))
            continue
        cells.append(AblationCell(variant, as_rate(rate)))
    return AblationReport(cells)
