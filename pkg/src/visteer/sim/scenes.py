"""Procedural scene generation for the four task families.

Training and held-out conditions are driven by a JSON split registry so the
in-distribution / out-of-distribution boundary is data, not code.  Every
scene is reproducible from (family, ood, seed).

Families:

* ``sorting`` - categorized items go into color-coded boxes; the category of
  an item is encoded by its shape, so a policy can ground "recyclable waste"
  visually.  OOD variants recolor the target (novel_color) or give it a shape
  never seen for any category (novel_category).
* ``attribute_pick`` - four colored eggs sit on a 4x4 grid of fixed cells,
  one canonical cell per training color.  OOD variants move the target egg
  to an unused cell (novel_position) or introduce a held-out color
  (novel_color).
* ``grid_place`` - an egg must be placed into an addressed cell of a 4x4
  carton; training uses eight cells, OOD the remaining four.
* ``pnp_close`` - pick an item, put it into a sliding-door cabinet, close
  the door.  OOD moves the cabinet to an unseen table region.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Any

import numpy as np

from ..errors import SceneError
from .types import (
    ArticulationState,
    GripperState,
    ObjectInstance,
    Receptacle,
    Rect,
    TaskSpec,
    TaskStep,
    Vec2,
    WorldState,
)

FAMILIES = ("sorting", "attribute_pick", "grid_place", "pnp_close")

OOD_TAGS: dict[str, tuple[str, ...]] = {
    "sorting": ("none", "novel_color", "novel_category"),
    "attribute_pick": ("none", "novel_color", "novel_position"),
    "grid_place": ("none", "novel_position"),
    "pnp_close": ("none", "novel_position"),
}

EGG_RADIUS = 0.045
ITEM_RADIUS = 0.05
PNP_OBJECT_STYLE = {
    "wine": ("triangle", "purple"),
    "can": ("circle", "cyan"),
    "cup": ("square", "orange"),
}
SORT_BOX_RECTS: dict[str, Rect] = {
    "green box": (0.05, 0.05, 0.30, 0.30),
    "red box": (0.37, 0.05, 0.62, 0.30),
    "black box": (0.70, 0.05, 0.95, 0.30),
}
BOX_COLOR = {"green box": "green", "red box": "red", "black box": "black"}

_registry_cache: dict[str, Any] | None = None


def load_registry() -> dict[str, Any]:
    global _registry_cache
    if _registry_cache is None:
        text = resources.files("visteer.sim").joinpath("splits.json").read_text()
        _registry_cache = json.loads(text)
    return _registry_cache


def family_objects(family: str) -> list[str]:
    """Per-family list of "training objects" used to size demo collections."""
    reg = load_registry()
    train_colors = reg["colors"]["training"]
    if family == "sorting":
        cats = sorted(reg["sorting"]["category_shapes"])
        return [f"{c}:{col}" for c in cats for col in train_colors]
    if family == "attribute_pick":
        return list(train_colors)
    if family == "grid_place":
        return [f"r{r}c{c}" for r, c in reg["grid_place"]["id_cells"]]
    if family == "pnp_close":
        return list(reg["pnp_close"]["objects"])
    raise SceneError(f"unknown family {family!r}")


def _cell_rect(origin: Vec2, size: float, row: int, col: int) -> Rect:
    x1 = origin[0] + col * size
    y1 = origin[1] + row * size
    return (x1, y1, x1 + size, y1 + size)


def _cell_center(origin: Vec2, size: float, row: int, col: int) -> Vec2:
    x1, y1, x2, y2 = _cell_rect(origin, size, row, col)
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


def _sample_point(
    rng: np.random.Generator,
    xlo: float,
    xhi: float,
    ylo: float,
    yhi: float,
    taken: list[Vec2],
    min_dist: float,
    tries: int = 200,
) -> Vec2:
    for _ in range(tries):
        p = (float(rng.uniform(xlo, xhi)), float(rng.uniform(ylo, yhi)))
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_dist**2 for q in taken):
            taken.append(p)
            return p
    raise SceneError("could not place objects without overlap")


def _gripper_start(rng: np.random.Generator) -> GripperState:
    return GripperState(position=(float(rng.uniform(0.08, 0.92)), float(rng.uniform(0.08, 0.92))))


def _check(family: str, ood: str) -> None:
    if family not in FAMILIES:
        raise SceneError(f"unknown family {family!r}")
    if ood not in OOD_TAGS[family]:
        raise SceneError(f"family {family!r} does not define ood tag {ood!r}")


def generate_scene(
    family: str, *, ood: str = "none", seed: int, registry: dict[str, Any] | None = None
) -> tuple[WorldState, TaskSpec]:
    """Build the initial world plus its ground-truth task description."""
    _check(family, ood)
    reg = registry if registry is not None else load_registry()
    rng = np.random.default_rng(np.random.PCG64(seed))
    if family == "sorting":
        return _scene_sorting(reg, ood, rng)
    if family == "attribute_pick":
        return _scene_attribute(reg, ood, rng)
    if family == "grid_place":
        return _scene_grid_place(reg, ood, rng)
    return _scene_pnp_close(reg, ood, rng)


def _scene_sorting(reg: dict, ood: str, rng: np.random.Generator) -> tuple[WorldState, TaskSpec]:
    cfg = reg["sorting"]
    train_colors = reg["colors"]["training"]
    held_out = reg["colors"]["held_out"]
    categories = sorted(cfg["category_shapes"])

    target_cat = str(rng.choice(categories))
    distractor_cats = [c for c in categories if c != target_cat]

    if ood == "novel_color":
        target_color = str(rng.choice(held_out))
    else:
        target_color = str(rng.choice(train_colors))
    if ood == "novel_category":
        target_shape = cfg["novel_category_shape"]
    else:
        target_shape = cfg["category_shapes"][target_cat]

    receptacles = [
        Receptacle(i, "box", label, SORT_BOX_RECTS[label], color=BOX_COLOR[label])
        for i, label in enumerate(sorted(SORT_BOX_RECTS))
    ]

    taken: list[Vec2] = []
    objects: list[ObjectInstance] = []
    pos = _sample_point(rng, 0.1, 0.9, 0.45, 0.9, taken, 0.16)
    objects.append(
        ObjectInstance(
            0,
            target_shape,
            target_color,
            ITEM_RADIUS,
            pos,
            labels=(cfg["category_phrases"][target_cat],),
            category=target_cat,
        )
    )
    for i, cat in enumerate(distractor_cats, start=1):
        color = str(rng.choice(train_colors))
        pos = _sample_point(rng, 0.1, 0.9, 0.45, 0.9, taken, 0.16)
        objects.append(
            ObjectInstance(
                i,
                cfg["category_shapes"][cat],
                color,
                ITEM_RADIUS,
                pos,
                labels=(cfg["category_phrases"][cat],),
                category=cat,
            )
        )

    box_label = cfg["box_for_category"][target_cat]
    box = next(r for r in receptacles if r.label == box_label)
    phrase = cfg["category_phrases"][target_cat]
    state = WorldState(objects, receptacles, _gripper_start(rng))
    task = TaskSpec(
        family="sorting",
        instruction=f"put the {phrase} into the {box_label}",
        steps=(TaskStep("pick", phrase), TaskStep("place", phrase, box_label)),
        target_object_id=0,
        target_receptacle_id=box.receptacle_id,
        ood_tag=ood,
    )
    return state, task


def _scene_attribute(reg: dict, ood: str, rng: np.random.Generator) -> tuple[WorldState, TaskSpec]:
    cfg = reg["attribute_pick"]
    train_colors = list(cfg["id_cells"])
    origin = tuple(cfg["grid_origin"])
    size = cfg["cell_size"]
    rows, cols = cfg["grid_shape"]
    id_cells = {color: tuple(cell) for color, cell in cfg["id_cells"].items()}
    all_cells = [(r, c) for r in range(rows) for c in range(cols)]
    unused_cells = [c for c in all_cells if c not in id_cells.values()]

    def egg_at(object_id: int, color: str, cell: tuple[int, int]) -> ObjectInstance:
        cx, cy = _cell_center(origin, size, *cell)
        jx = float(rng.uniform(-0.015, 0.015))
        jy = float(rng.uniform(-0.015, 0.015))
        return ObjectInstance(
            object_id,
            "circle",
            color,
            EGG_RADIUS,
            (cx + jx, cy + jy),
            labels=(f"{color} egg", "egg"),
        )

    objects: list[ObjectInstance] = []
    if ood == "none":
        target_color = str(rng.choice(train_colors))
        for i, color in enumerate(train_colors):
            objects.append(egg_at(i, color, id_cells[color]))
        target_id = train_colors.index(target_color)
    elif ood == "novel_position":
        target_color = str(rng.choice(cfg["novel_position_targets"]))
        moved_cell = unused_cells[int(rng.integers(len(unused_cells)))]
        for i, color in enumerate(train_colors):
            cell = moved_cell if color == target_color else id_cells[color]
            objects.append(egg_at(i, color, cell))
        target_id = train_colors.index(target_color)
    else:  # novel_color
        target_color = str(rng.choice(reg["colors"]["held_out"]))
        for i, color in enumerate(train_colors):
            objects.append(egg_at(i, color, id_cells[color]))
        cell = unused_cells[int(rng.integers(len(unused_cells)))]
        target_id = len(objects)
        objects.append(egg_at(target_id, target_color, cell))

    state = WorldState(objects, [], _gripper_start(rng))
    task = TaskSpec(
        family="attribute_pick",
        instruction=f"pick up the {target_color} egg",
        steps=(TaskStep("pick", f"{target_color} egg"),),
        target_object_id=target_id,
        ood_tag=ood,
    )
    return state, task


def _scene_grid_place(reg: dict, ood: str, rng: np.random.Generator) -> tuple[WorldState, TaskSpec]:
    cfg = reg["grid_place"]
    origin = tuple(cfg["grid_origin"])
    size = cfg["cell_size"]
    rows, cols = cfg["grid_shape"]
    pool = cfg["id_cells"] if ood == "none" else cfg["ood_cells"]
    row, col = (int(v) for v in pool[int(rng.integers(len(pool)))])

    receptacles = [
        Receptacle(
            r * cols + c,
            "grid_cell",
            f"line {r + 1} column {c + 1}",
            _cell_rect(origin, size, r, c),
        )
        for r in range(rows)
        for c in range(cols)
    ]

    taken: list[Vec2] = []
    egg_color = str(rng.choice(reg["colors"]["training"]))
    egg_pos = _sample_point(rng, 0.08, 0.2, 0.35, 0.85, taken, 0.12)
    objects = [
        ObjectInstance(0, "circle", egg_color, EGG_RADIUS, egg_pos, labels=("egg", f"{egg_color} egg"))
    ]
    for i in range(1, 3):
        color = str(rng.choice(reg["colors"]["training"]))
        pos = _sample_point(rng, 0.08, 0.88, 0.06, 0.18, taken, 0.14)
        objects.append(
            ObjectInstance(i, "square", color, 0.04, pos, labels=(f"{color} square",))
        )

    cell_label = f"line {row + 1} column {col + 1}"
    state = WorldState(objects, receptacles, _gripper_start(rng))
    task = TaskSpec(
        family="grid_place",
        instruction=f"place the egg at line {row + 1}, column {col + 1}",
        steps=(TaskStep("pick", "egg"), TaskStep("place", "egg", cell_label)),
        target_object_id=0,
        target_receptacle_id=row * cols + col,
        target_cell=(row, col),
        ood_tag=ood,
    )
    return state, task


def _scene_pnp_close(reg: dict, ood: str, rng: np.random.Generator) -> tuple[WorldState, TaskSpec]:
    cfg = reg["pnp_close"]
    nouns = list(cfg["objects"])
    target_noun = str(rng.choice(nouns))
    rect = tuple(cfg["ood_container_rect"] if ood == "novel_position" else cfg["container_rect"])

    cabinet = Receptacle(
        0, "drawer", "cabinet", rect, color="brown", articulation=ArticulationState(1.0)
    )

    taken: list[Vec2] = []
    objects: list[ObjectInstance] = []
    order = [target_noun] + [n for n in nouns if n != target_noun]
    for i, noun in enumerate(order):
        shape, color = PNP_OBJECT_STYLE[noun]
        pos = _sample_point(rng, 0.08, 0.38, 0.55, 0.92, taken, 0.14)
        objects.append(ObjectInstance(i, shape, color, ITEM_RADIUS, pos, labels=(noun,)))

    state = WorldState(objects, [cabinet], _gripper_start(rng))
    task = TaskSpec(
        family="pnp_close",
        instruction=(
            f"pick up the {target_noun}, place it into the cabinet and close the cabinet"
        ),
        steps=(
            TaskStep("pick", target_noun),
            TaskStep("place", target_noun, "cabinet"),
            TaskStep("close", "door"),
        ),
        target_object_id=0,
        target_receptacle_id=0,
        ood_tag=ood,
    )
    return state, task
