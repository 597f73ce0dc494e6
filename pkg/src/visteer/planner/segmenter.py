"""Entity segmentation against ground-truth masks.

The ground-truth backend returns exact masks with score 1.0.  The noisy
backend translates each candidate by Gaussian pixel noise, scores it by box
IoU against the truth, drops scores below the detection threshold, and
keeps the highest survivor; this exercises the score-filtering path without
a real detector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..errors import NoMatchError
from ..render import Observation

SCORE_THRESHOLD = 0.5
DEFAULT_JITTER_PX = 2.0

BACKENDS = ("ground_truth", "noisy")


@dataclass
class SegmentCandidate:
    key: str  # entity key in the observation
    label: str
    mask: NDArray[np.bool_]
    box: tuple[int, int, int, int]
    score: float


def _box_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    if ix2 < ix1 or iy2 < iy1:
        return 0.0
    inter = (ix2 - ix1 + 1) * (iy2 - iy1 + 1)
    area_a = (ax2 - ax1 + 1) * (ay2 - ay1 + 1)
    area_b = (bx2 - bx1 + 1) * (by2 - by1 + 1)
    return inter / (area_a + area_b - inter)


def _shift_mask(mask: NDArray[np.bool_], du: int, dv: int) -> NDArray[np.bool_]:
    h, w = mask.shape
    out = np.zeros_like(mask)
    src_v = slice(max(0, -dv), min(h, h - dv))
    src_u = slice(max(0, -du), min(w, w - du))
    dst_v = slice(max(0, dv), min(h, h + dv))
    dst_u = slice(max(0, du), min(w, w + du))
    out[dst_v, dst_u] = mask[src_v, src_u]
    return out


def segment(
    obs: Observation,
    query: str,
    backend: str = "ground_truth",
    *,
    rng: np.random.Generator | None = None,
    jitter_px: float = DEFAULT_JITTER_PX,
    threshold: float = SCORE_THRESHOLD,
) -> SegmentCandidate | None:
    """Resolve a noun phrase to the best-scoring mask candidate.

    Returns None when candidates exist but all fall below the threshold;
    raises NoMatchError when no entity answers to the noun at all.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown segmentation backend {backend!r}")
    matches = [e for e in obs.entities if query in e.labels]
    if not matches:
        raise NoMatchError(f"no entity answers to {query!r}")

    candidates: list[SegmentCandidate] = []
    for ent in matches:
        mask = obs.gt_masks[ent.key]
        if not mask.any():
            continue
        box = obs.gt_boxes[ent.key]
        if backend == "ground_truth":
            candidates.append(SegmentCandidate(ent.key, query, mask, box, 1.0))
            continue
        if rng is None:
            rng = np.random.default_rng(0)
        du = int(round(float(rng.normal(0.0, jitter_px))))
        dv = int(round(float(rng.normal(0.0, jitter_px))))
        shifted = _shift_mask(mask, du, dv)
        if not shifted.any():
            continue
        rows, cols = np.nonzero(shifted)
        jittered_box = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
        score = _box_iou(jittered_box, box)
        candidates.append(SegmentCandidate(ent.key, query, shifted, jittered_box, score))

    kept = [c for c in candidates if c.score >= threshold]
    if not kept:
        return None
    kept.sort(key=lambda c: (-c.score, c.key))
    return kept[0]
