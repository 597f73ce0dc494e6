"""Symbolic visual prompts and their rasterization.

A prompt is a tiny structured instruction for the controller: an anchor to
reach (crosshair or point glyph) and/or a box region to act on (1-px
outline).  Rasterization overlays glyphs on an RGB frame; in separate-image
mode the overlay is a second input stream frozen at the frame it was built
from, in direct-overlay mode the glyphs are burned into the single
observation stream fed to the policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import PromptError
from .render import PROMPT_COLOR

STYLES = ("crosshair", "point")
OVERLAY_MODES = ("separate_image", "direct_overlay")
CROSSHAIR_ARM = 4  # line spans offsets -4..4 -> length 9
CROSSHAIR_GAP = 1  # offsets with |d| <= 1 are left blank -> 3-px gap


@dataclass
class VisualPrompt:
    """Symbolic prompt; anchor and box are pixel coordinates, (u, v) order."""

    anchor: tuple[int, int] | None = None
    box: tuple[int, int, int, int] | None = None
    style: str = "crosshair"
    render_both: bool = False

    def validate(self, width: int, height: int) -> None:
        if self.anchor is None and self.box is None:
            raise PromptError("prompt must carry an anchor or a box")
        if self.style not in STYLES:
            raise PromptError(f"unknown prompt style {self.style!r}")
        if self.anchor is not None:
            u, v = self.anchor
            if not (0 <= u < width and 0 <= v < height):
                raise PromptError(f"anchor {self.anchor} outside {width}x{height} raster")
        if self.box is not None:
            u1, v1, u2, v2 = self.box
            if not (u1 < u2 and v1 < v2):
                raise PromptError(f"box {self.box} must have positive area")
            if not (0 <= u1 and u2 < width and 0 <= v1 and v2 < height):
                raise PromptError(f"box {self.box} outside {width}x{height} raster")

    def to_dict(self) -> dict:
        return {
            "anchor": None if self.anchor is None else list(self.anchor),
            "box": None if self.box is None else list(self.box),
            "style": self.style,
            "render_both": self.render_both,
        }

    @staticmethod
    def from_dict(d: dict) -> "VisualPrompt":
        return VisualPrompt(
            anchor=None if d.get("anchor") is None else tuple(d["anchor"]),
            box=None if d.get("box") is None else tuple(d["box"]),
            style=d.get("style", "crosshair"),
            render_both=bool(d.get("render_both", False)),
        )


@dataclass
class PromptImage:
    raster: NDArray[np.uint8]
    prompt: VisualPrompt
    clipped: bool = False  # glyph arms ran past the raster edge


def _draw_anchor(img: NDArray, u: int, v: int, style: str, h: int, w: int) -> bool:
    clipped = False
    if style == "point":
        for dv in (-1, 0, 1):
            for du in (-1, 0, 1):
                uu, vv = u + du, v + dv
                if 0 <= uu < w and 0 <= vv < h:
                    img[vv, uu] = PROMPT_COLOR
                else:
                    clipped = True
        return clipped
    for d in range(-CROSSHAIR_ARM, CROSSHAIR_ARM + 1):
        if abs(d) <= CROSSHAIR_GAP:
            continue
        if 0 <= u + d < w:
            img[v, u + d] = PROMPT_COLOR
        else:
            clipped = True
        if 0 <= v + d < h:
            img[v + d, u] = PROMPT_COLOR
        else:
            clipped = True
    return clipped


def _draw_box(img: NDArray, box: tuple[int, int, int, int]) -> None:
    u1, v1, u2, v2 = box
    img[v1, u1 : u2 + 1] = PROMPT_COLOR
    img[v2, u1 : u2 + 1] = PROMPT_COLOR
    img[v1 : v2 + 1, u1] = PROMPT_COLOR
    img[v1 : v2 + 1, u2] = PROMPT_COLOR


def rasterize_prompt(frame: NDArray[np.uint8], prompt: VisualPrompt) -> PromptImage:
    """Overlay the prompt glyphs on a copy of ``frame``.

    Pure: the input frame is never modified, and identical inputs yield
    identical rasters.  Non-glyph pixels equal the source frame exactly.
    """
    h, w = frame.shape[:2]
    prompt.validate(w, h)
    img = frame.copy()
    clipped = False
    if prompt.box is not None:
        _draw_box(img, prompt.box)
    if prompt.anchor is not None:
        clipped = _draw_anchor(img, prompt.anchor[0], prompt.anchor[1], prompt.style, h, w)
    return PromptImage(raster=img, prompt=prompt, clipped=clipped)


def dump_raster(path: str | Path, raster: NDArray[np.uint8]) -> None:
    """Write raw row-major RGB8 bytes plus a JSON sidecar with dimensions."""
    path = Path(path)
    if raster.dtype != np.uint8 or raster.ndim != 3 or raster.shape[2] != 3:
        raise ValueError("raster must be HxWx3 uint8")
    path.write_bytes(np.ascontiguousarray(raster).tobytes())
    sidecar = {"width": int(raster.shape[1]), "height": int(raster.shape[0]), "channels": 3}
    Path(str(path) + ".hdr.json").write_text(json.dumps(sidecar, sort_keys=True))


def load_raster(path: str | Path) -> NDArray[np.uint8]:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".hdr.json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    return data.reshape(sidecar["height"], sidecar["width"], sidecar["channels"]).copy()
