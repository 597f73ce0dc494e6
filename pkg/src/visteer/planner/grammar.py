"""Closed-vocabulary instruction grammar and rule-based decomposition.

Instructions come from four fixed templates.  Decomposition splits them
into short atomic subtasks, preserving object and location nouns verbatim.
The vocabulary is derived from the scene split registry so grammar and
scene generator cannot drift apart.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import DecompositionError
from ..sim.scenes import PNP_OBJECT_STYLE, load_registry


def instruction_vocabulary() -> dict[str, list[str]]:
    """Noun classes the grammar accepts."""
    reg = load_registry()
    colors = list(reg["colors"]["training"]) + list(reg["colors"]["held_out"])
    return {
        "egg_colors": colors,
        "category_phrases": sorted(reg["sorting"]["category_phrases"].values()),
        "box_labels": sorted(set(reg["sorting"]["box_for_category"].values())),
        "portable_objects": sorted(PNP_OBJECT_STYLE),
        "containers": ["cabinet"],
    }


@dataclass
class Subtask:
    text: str
    verb: str  # "pick" | "place" | "close"
    object_noun: str
    location_noun: str | None = None


@dataclass
class SubtaskPlan:
    instruction: str
    subtasks: list[Subtask]
    cursor: int = 0

    @property
    def complete(self) -> bool:
        return self.cursor >= len(self.subtasks)

    def active(self) -> Subtask | None:
        if self.complete:
            return None
        return self.subtasks[self.cursor]

    def advance_cursor(self) -> None:
        if self.complete:
            raise ValueError("cursor already at end")
        self.cursor += 1


_PICK_RE = re.compile(r"^pick up the (?P<obj>[a-z ]+)$")
_PUT_RE = re.compile(r"^put the (?P<obj>[a-z ]+) into the (?P<loc>[a-z ]+)$")
_GRID_RE = re.compile(r"^place the egg at line (?P<row>\d+), column (?P<col>\d+)$")
_PNP_RE = re.compile(
    r"^pick up the (?P<obj>[a-z ]+), place it into the (?P<loc>[a-z ]+)"
    r" and close the (?P<loc2>[a-z ]+)$"
)


def _pickable_nouns(vocab: dict[str, list[str]]) -> set[str]:
    nouns = {f"{c} egg" for c in vocab["egg_colors"]}
    nouns.update(vocab["portable_objects"])
    nouns.add("egg")
    return nouns


def decompose(instruction: str) -> SubtaskPlan:
    """Split an instruction into ordered atomic subtasks."""
    vocab = instruction_vocabulary()
    text = instruction.strip()

    m = _PNP_RE.match(text)
    if m:
        obj, loc, loc2 = m.group("obj"), m.group("loc"), m.group("loc2")
        if obj not in vocab["portable_objects"]:
            raise DecompositionError("unknown object noun", obj)
        if loc not in vocab["containers"]:
            raise DecompositionError("unknown container noun", loc)
        if loc2 != loc:
            raise DecompositionError("close clause names a different container", loc2)
        return SubtaskPlan(
            text,
            [
                Subtask(f"pick up the {obj}", "pick", obj),
                Subtask(f"place the {obj} into the {loc}", "place", obj, loc),
                # closing acts on the articulated part, not the container body
                Subtask(f"close the {loc}", "close", "door"),
            ],
        )

    m = _GRID_RE.match(text)
    if m:
        row, col = int(m.group("row")), int(m.group("col"))
        if not (1 <= row <= 4 and 1 <= col <= 4):
            raise DecompositionError("cell address out of range", f"line {row}, column {col}")
        cell = f"line {row} column {col}"
        return SubtaskPlan(
            text,
            [
                Subtask("pick up the egg", "pick", "egg"),
                Subtask(f"place the egg at line {row}, column {col}", "place", "egg", cell),
            ],
        )

    m = _PUT_RE.match(text)
    if m:
        obj, loc = m.group("obj"), m.group("loc")
        if obj not in vocab["category_phrases"]:
            raise DecompositionError("unknown object noun", obj)
        if loc not in vocab["box_labels"]:
            raise DecompositionError("unknown location noun", loc)
        return SubtaskPlan(
            text,
            [
                Subtask(f"pick up the {obj}", "pick", obj),
                Subtask(f"place the {obj} into the {loc}", "place", obj, loc),
            ],
        )

    m = _PICK_RE.match(text)
    if m:
        obj = m.group("obj")
        if obj not in _pickable_nouns(vocab):
            raise DecompositionError("unknown object noun", obj)
        return SubtaskPlan(text, [Subtask(f"pick up the {obj}", "pick", obj)])

    raise DecompositionError("instruction matches no known template", text)


_SUB_PICK_RE = re.compile(r"^pick up the (?P<obj>[a-z ]+)$")
_SUB_PLACE_RE = re.compile(r"^place the (?P<obj>[a-z ]+) into the (?P<loc>[a-z ]+)$")
_SUB_GRID_RE = re.compile(r"^place the egg at line (?P<row>\d+), column (?P<col>\d+)$")
_SUB_CLOSE_RE = re.compile(r"^close the (?P<loc>[a-z ]+)$")


def parse_subtask(text: str) -> Subtask:
    """Parse one already-decomposed subtask line (external planner output)."""
    text = text.strip()
    m = _SUB_GRID_RE.match(text)
    if m:
        cell = f"line {int(m.group('row'))} column {int(m.group('col'))}"
        return Subtask(text, "place", "egg", cell)
    m = _SUB_PLACE_RE.match(text)
    if m:
        return Subtask(text, "place", m.group("obj"), m.group("loc"))
    m = _SUB_PICK_RE.match(text)
    if m:
        return Subtask(text, "pick", m.group("obj"))
    m = _SUB_CLOSE_RE.match(text)
    if m:
        return Subtask(text, "close", "door")
    raise DecompositionError("subtask matches no known template", text)
