"""Overhead rasterizer with ground-truth instance masks.

Pixel (u, v) covers the normalized square [u/W, (u+1)/W) x [v/H, (v+1)/H);
a pixel belongs to a region when its center falls inside.  Entity masks are
stamped into an id map, so overlapping paint resolves to the top entity and
masks stay pairwise disjoint by construction.  The gripper glyph is drawn
last and owns no mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import EmptyMaskError
from .sim.types import ObjectInstance, Receptacle, WorldState
from .sim.world import door_rect, handle_point, handle_point_closed

TABLE_BG = (104, 104, 104)
GRIPPER_COLOR = (255, 255, 255)
PROMPT_COLOR = (255, 0, 255)  # reserved for prompt glyphs, never in the palette

COLOR_RGB: dict[str, tuple[int, int, int]] = {
    "red": (214, 39, 40),
    "blue": (31, 119, 237),
    "yellow": (232, 204, 44),
    "pink": (247, 151, 190),
    "purple": (148, 63, 205),
    "green": (44, 160, 68),
    "orange": (255, 127, 14),
    "cyan": (23, 190, 207),
    "brown": (140, 86, 59),
    "black": (20, 20, 20),
}

_DRAWER_BODY = (66, 56, 46)
_DRAWER_BODY_EDGE = (40, 34, 28)
_DOOR_FILL = (172, 142, 66)
_DOOR_EDGE = (120, 95, 40)
_HANDLE_COLOR = (20, 20, 20)
_CELL_EDGE = (168, 168, 168)


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    ego_enabled: bool = False
    ego_halfwidth: float = 0.15  # normalized half extent of the ego crop


@dataclass
class EntityRef:
    key: str  # "object:3" | "receptacle:1" | "handle:0"
    kind: str
    ref_id: int
    labels: tuple[str, ...]


@dataclass
class ArticulationView:
    open_fraction: float
    handle_px: tuple[int, int]  # (u, v) of the live handle
    handle_closed_px: tuple[int, int]  # (u, v) of the handle once shut
    door_box: tuple[int, int, int, int]


@dataclass
class Observation:
    overhead: NDArray[np.uint8]
    width: int
    height: int
    entities: list[EntityRef]
    gt_masks: dict[str, NDArray[np.bool_]]
    gt_boxes: dict[str, tuple[int, int, int, int]]
    gripper_px: tuple[int, int]
    articulations: dict[int, ArticulationView] = field(default_factory=dict)
    ego: NDArray[np.uint8] | None = None


def px_of(x: float, extent: int) -> int:
    """Pixel index containing normalized coordinate x."""
    return min(extent - 1, max(0, int(np.floor(x * extent))))


def rect_px(rect: tuple[float, float, float, float], w: int, h: int) -> tuple[int, int, int, int]:
    """Inclusive pixel bounds of the pixels whose centers fall in the rect."""
    x1, y1, x2, y2 = rect
    u1 = int(np.ceil(x1 * w - 0.5))
    u2 = int(np.ceil(x2 * w - 0.5)) - 1
    v1 = int(np.ceil(y1 * h - 0.5))
    v2 = int(np.ceil(y2 * h - 0.5)) - 1
    return (max(0, u1), max(0, v1), min(w - 1, u2), min(h - 1, v2))


def mask_centroid(mask: NDArray[np.bool_]) -> tuple[int, int]:
    """Integer centroid (row, col) of a boolean mask; empty masks are errors."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError("mask has zero foreground pixels")
    r = int(np.floor(rows.mean() + 0.5))
    c = int(np.floor(cols.mean() + 0.5))
    return (r, c)


def _pixel_centers(w: int, h: int) -> tuple[NDArray, NDArray]:
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    return np.meshgrid(xs, ys)  # each (H, W)


def _shape_predicate(obj: ObjectInstance, xx: NDArray, yy: NDArray) -> NDArray[np.bool_]:
    cx, cy = obj.position
    r = obj.radius
    du = xx - cx
    dv = yy - cy
    if obj.shape == "circle":
        return du * du + dv * dv <= r * r
    if obj.shape == "square":
        return (np.abs(du) <= r) & (np.abs(dv) <= r)
    if obj.shape == "triangle":
        ax, ay = cx, cy - r
        bx, by = cx - 0.866 * r, cy + 0.5 * r
        qx, qy = cx + 0.866 * r, cy + 0.5 * r

        def side(px1, py1, px2, py2):
            return (px2 - px1) * (yy - py1) - (py2 - py1) * (xx - px1)

        s1 = side(ax, ay, bx, by)
        s2 = side(bx, by, qx, qy)
        s3 = side(qx, qy, ax, ay)
        return ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    if obj.shape == "cross":
        bar1 = (np.abs(du) <= r) & (np.abs(dv) <= r / 3.0)
        bar2 = (np.abs(dv) <= r) & (np.abs(du) <= r / 3.0)
        return bar1 | bar2
    raise ValueError(f"unknown shape {obj.shape!r}")


def _disk(xx: NDArray, yy: NDArray, center: tuple[float, float], radius: float) -> NDArray[np.bool_]:
    du = xx - center[0]
    dv = yy - center[1]
    return du * du + dv * dv <= radius * radius


def _fill_rect(img: NDArray, box: tuple[int, int, int, int], color: tuple[int, int, int]) -> None:
    u1, v1, u2, v2 = box
    if u2 >= u1 and v2 >= v1:
        img[v1 : v2 + 1, u1 : u2 + 1] = color


def _outline_rect(img: NDArray, box: tuple[int, int, int, int], color: tuple[int, int, int]) -> None:
    u1, v1, u2, v2 = box
    if u2 < u1 or v2 < v1:
        return
    img[v1, u1 : u2 + 1] = color
    img[v2, u1 : u2 + 1] = color
    img[v1 : v2 + 1, u1] = color
    img[v1 : v2 + 1, u2] = color


def _tint(color: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(int(0.4 * c + 0.6 * b) for c, b in zip(color, TABLE_BG))


def _paint_receptacle(img: NDArray, rec: Receptacle, w: int, h: int) -> None:
    box = rect_px(rec.rect, w, h)
    if rec.kind == "grid_cell":
        _outline_rect(img, box, _CELL_EDGE)
        return
    if rec.kind == "drawer":
        _fill_rect(img, box, _DRAWER_BODY)
        _outline_rect(img, box, _DRAWER_BODY_EDGE)
        door = rect_px(door_rect(rec), w, h)
        _fill_rect(img, door, _DOOR_FILL)
        _outline_rect(img, door, _DOOR_EDGE)
        return
    color = COLOR_RGB[rec.color or "black"]
    _fill_rect(img, box, _tint(color))
    _outline_rect(img, box, color)


def _paint_gripper(img: NDArray, xx: NDArray, yy: NDArray, state: WorldState, w: int) -> None:
    pos = state.gripper.position
    rg = max(2.0 / w, 0.045)
    if state.gripper.closed:
        img[_disk(xx, yy, pos, rg * 0.72)] = GRIPPER_COLOR
    else:
        outer = _disk(xx, yy, pos, rg)
        inner = _disk(xx, yy, pos, rg - 1.6 / w)
        img[outer & ~inner] = GRIPPER_COLOR


def render_observation(state: WorldState, cam: CameraConfig | None = None) -> Observation:
    cam = cam or CameraConfig()
    w, h = cam.width, cam.height
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = TABLE_BG
    xx, yy = _pixel_centers(w, h)

    entities: list[EntityRef] = []
    gt_masks: dict[str, NDArray[np.bool_]] = {}
    gt_boxes: dict[str, tuple[int, int, int, int]] = {}
    articulations: dict[int, ArticulationView] = {}

    for rec in state.receptacles:
        _paint_receptacle(img, rec, w, h)
        key = f"receptacle:{rec.receptacle_id}"
        box = rect_px(rec.rect, w, h)
        u1, v1, u2, v2 = box
        mask = np.zeros((h, w), dtype=bool)
        mask[v1 : v2 + 1, u1 : u2 + 1] = True
        entities.append(EntityRef(key, "receptacle", rec.receptacle_id, (rec.label,)))
        gt_masks[key] = mask
        gt_boxes[key] = box
        if rec.articulation is not None:
            hp = handle_point(rec)
            handle_mask = _disk(xx, yy, hp, max(1.5 / w, 0.022))
            img[handle_mask] = _HANDLE_COLOR
            hkey = f"handle:{rec.receptacle_id}"
            entities.append(EntityRef(hkey, "handle", rec.receptacle_id, ("door",)))
            gt_masks[hkey] = handle_mask
            rows, cols = np.nonzero(handle_mask)
            gt_boxes[hkey] = (
                int(cols.min()),
                int(rows.min()),
                int(cols.max()),
                int(rows.max()),
            )
            hc = handle_point_closed(rec)
            articulations[rec.receptacle_id] = ArticulationView(
                open_fraction=rec.articulation.open_fraction,
                handle_px=(px_of(hp[0], w), px_of(hp[1], h)),
                handle_closed_px=(px_of(hc[0], w), px_of(hc[1], h)),
                door_box=rect_px(door_rect(rec), w, h),
            )

    idmap = np.full((h, w), -1, dtype=np.int32)
    held_id = state.gripper.held_object
    draw_order = [o for o in state.objects if o.object_id != held_id]
    if held_id is not None:
        draw_order.append(state.object_by_id(held_id))
    for obj in draw_order:
        shape_mask = _shape_predicate(obj, xx, yy)
        img[shape_mask] = COLOR_RGB[obj.color]
        idmap[shape_mask] = obj.object_id

    for obj in state.objects:
        key = f"object:{obj.object_id}"
        mask = idmap == obj.object_id
        entities.append(EntityRef(key, "object", obj.object_id, obj.labels))
        gt_masks[key] = mask
        rows, cols = np.nonzero(mask)
        if rows.size:
            gt_boxes[key] = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
        else:
            gt_boxes[key] = (0, 0, -1, -1)  # fully occluded

    _paint_gripper(img, xx, yy, state, w)
    gp = (px_of(state.gripper.position[0], w), px_of(state.gripper.position[1], h))

    ego = None
    if cam.ego_enabled:
        half = max(2, int(round(cam.ego_halfwidth * w)))
        ego = np.empty((2 * half, 2 * half, 3), dtype=np.uint8)
        ego[:] = TABLE_BG
        u1, v1 = gp[0] - half, gp[1] - half
        su1, sv1 = max(0, u1), max(0, v1)
        su2, sv2 = min(w, gp[0] + half), min(h, gp[1] + half)
        ego[sv1 - v1 : sv2 - v1, su1 - u1 : su2 - u1] = img[sv1:sv2, su1:su2]

    return Observation(
        overhead=img,
        width=w,
        height=h,
        entities=entities,
        gt_masks=gt_masks,
        gt_boxes=gt_boxes,
        gripper_px=gp,
        articulations=articulations,
        ego=ego,
    )
