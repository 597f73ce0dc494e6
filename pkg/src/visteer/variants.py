"""Named model/prompt configurations used across training and evaluation.

Each variant fixes how prompts reach the policy (separate image, overlaid
on the observation, or not at all), how anchors are drawn, whether the
planner decomposes instructions or renders one static prompt, and which
frames receive grounding supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class VariantSpec:
    name: str
    prompt_mode: str  # "separate_image" | "direct_overlay" | "none"
    style: str  # anchor glyph: "crosshair" | "point"
    static: bool  # one render-everything prompt instead of a decomposed plan
    gate: str  # grounding supervision: "key_frames" | "all_frames" | "off"


VARIANTS: dict[str, VariantSpec] = {
    v.name: v
    for v in [
        VariantSpec("full", "separate_image", "crosshair", False, "key_frames"),
        VariantSpec("no_grounding", "separate_image", "crosshair", False, "off"),
        VariantSpec("all_frame_grounding", "separate_image", "crosshair", False, "all_frames"),
        VariantSpec("point", "separate_image", "point", False, "key_frames"),
        VariantSpec("direct_overlay", "direct_overlay", "crosshair", False, "key_frames"),
        VariantSpec("no_decomposition", "separate_image", "crosshair", True, "key_frames"),
        VariantSpec("language_only", "none", "crosshair", False, "off"),
    ]
}

ABLATION_GRID = (
    "full",
    "no_grounding",
    "all_frame_grounding",
    "point",
    "direct_overlay",
    "no_decomposition",
)


def get_variant(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(
            f"unknown variant {name!r}; choose from {sorted(VARIANTS)}"
        ) from None
