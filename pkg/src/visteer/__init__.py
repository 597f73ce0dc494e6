"""Tabletop manipulation testbed with an event-driven visual-prompt planner
and a prompt-conditioned low-level controller."""

__version__ = "0.1.0"
