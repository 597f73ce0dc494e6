"""Discretized coordinate grounding: bin codec, JSON form, and CE loss.

Pixel coordinates are quantized into N uniform bins over the raster extent.
Encoding maps pixel centers into bins; decoding returns the pixel nearest
the bin center, so a round trip moves a coordinate by at most half a bin.
The cross-entropy here is the auxiliary supervision target for coordinate
heads; its closed-form gradient (softmax minus one-hot, averaged over
coordinate rows) doubles as an oracle for autograd implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

N_BINS = 1000

_KIND_ARITY = {"point": 2, "box": 4}


def encode_coord(p: int, extent: int, n_bins: int = N_BINS) -> int:
    """Bin index of pixel coordinate p within [0, extent).

    floor((p + 0.5) / extent * n_bins), evaluated in exact integer
    arithmetic so boundary cases never depend on float rounding.
    """
    if not 0 <= p < extent:
        raise ValueError(f"coordinate {p} outside [0, {extent})")
    b = ((2 * p + 1) * n_bins) // (2 * extent)
    return min(n_bins - 1, max(0, b))


def decode_coord(b: int, extent: int, n_bins: int = N_BINS) -> int:
    """Pixel coordinate at the center of bin b.

    round-half-up((b + 0.5) / n_bins * extent - 0.5), which reduces to
    floor((2b + 1) * extent / (2 * n_bins)) in exact integer arithmetic.
    """
    if not 0 <= b < n_bins:
        raise ValueError(f"bin {b} outside [0, {n_bins})")
    p = ((2 * b + 1) * extent) // (2 * n_bins)
    return min(extent - 1, max(0, p))


@dataclass(frozen=True)
class GroundingTarget:
    """Quantized coordinates for one supervised frame."""

    kind: str  # "point" | "box"
    bins: tuple[int, ...]
    frame_index: int = 0
    is_key_frame: bool = True

    def __post_init__(self):
        if self.kind not in _KIND_ARITY:
            raise ValueError(f"unknown grounding kind {self.kind!r}")
        if len(self.bins) != _KIND_ARITY[self.kind]:
            raise ValueError(
                f"{self.kind} target needs {_KIND_ARITY[self.kind]} bins, got {len(self.bins)}"
            )


def point_target(
    anchor: tuple[int, int],
    width: int,
    height: int,
    *,
    frame_index: int = 0,
    is_key_frame: bool = True,
    n_bins: int = N_BINS,
) -> GroundingTarget:
    u, v = anchor
    return GroundingTarget(
        "point",
        (encode_coord(u, width, n_bins), encode_coord(v, height, n_bins)),
        frame_index,
        is_key_frame,
    )


def box_target(
    box: tuple[int, int, int, int],
    width: int,
    height: int,
    *,
    frame_index: int = 0,
    is_key_frame: bool = True,
    n_bins: int = N_BINS,
) -> GroundingTarget:
    u1, v1, u2, v2 = box
    return GroundingTarget(
        "box",
        (
            encode_coord(u1, width, n_bins),
            encode_coord(v1, height, n_bins),
            encode_coord(u2, width, n_bins),
            encode_coord(v2, height, n_bins),
        ),
        frame_index,
        is_key_frame,
    )


def target_to_json(target: GroundingTarget) -> str:
    """Canonical single-key JSON, e.g. '{"point":[12,40]}'."""
    return json.dumps({target.kind: list(target.bins)}, separators=(",", ":"))


def target_from_json(text: str, *, frame_index: int = 0, n_bins: int = N_BINS) -> GroundingTarget:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"grounding target is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or len(payload) != 1:
        raise ValueError("grounding target must be a single-key object")
    kind, bins = next(iter(payload.items()))
    if kind not in _KIND_ARITY:
        raise ValueError(f"unknown grounding kind {kind!r}")
    if not isinstance(bins, list) or len(bins) != _KIND_ARITY[kind]:
        raise ValueError(f"{kind} target needs {_KIND_ARITY[kind]} bins")
    for b in bins:
        if not isinstance(b, int) or isinstance(b, bool) or not 0 <= b < n_bins:
            raise ValueError(f"bin {b!r} outside [0, {n_bins})")
    return GroundingTarget(kind, tuple(bins), frame_index)


def grounding_ce_loss(
    logits: NDArray[np.floating], bins: tuple[int, ...] | list[int]
) -> tuple[float, NDArray[np.floating]]:
    """Mean cross-entropy over coordinate rows, with its exact gradient.

    ``logits`` has one row per coordinate.  Returns (loss, dloss/dlogits)
    where the gradient is (softmax - onehot) / n_rows, computed in the same
    dtype as the input.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError("logits must be (n_coords, n_bins)")
    k, n = logits.shape
    if len(bins) != k:
        raise ValueError(f"expected {k} target bins, got {len(bins)}")
    idx = np.asarray(bins, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= n):
        raise ValueError("target bin outside logit range")
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True)) + m
    log_probs = logits - lse
    loss = float(-log_probs[np.arange(k), idx].mean())
    grad = np.exp(log_probs)
    grad[np.arange(k), idx] -= 1.0
    grad /= k
    return loss, grad
