"""Gripper-status event detection.

An event fires when the scalar gripper status changes by more than epsilon
between consecutive frames.  With the binary open/closed encoding and the
default epsilon of 0.5 this is exactly the set of open-close transitions.
"""

from __future__ import annotations

from dataclasses import dataclass

EPSILON = 0.5


@dataclass(frozen=True)
class TransitionEvent:
    frame_index: int
    phi_before: float
    phi_after: float

    @property
    def kind(self) -> str:
        return "grasp" if self.phi_after > self.phi_before else "release"


def detect_event(phi_prev: float, phi_curr: float, epsilon: float = EPSILON) -> bool:
    return abs(phi_curr - phi_prev) > epsilon


def events_from_trace(phis: list[float], epsilon: float = EPSILON) -> list[int]:
    """Frame indices (from 1) where the status changed."""
    return [t for t in range(1, len(phis)) if detect_event(phis[t - 1], phis[t], epsilon)]


def key_frames(phis: list[float], epsilon: float = EPSILON) -> list[int]:
    """Frames carrying grounding supervision: the first frame plus events."""
    frames = events_from_trace(phis, epsilon)
    return [0] + frames if phis else []
