"""Shared exception types.

Every recoverable fault raised by the package derives from VisteerError so
callers (CLI, service) can map failures onto exit codes and wire responses
without catching bare Exception.
"""

from __future__ import annotations


class VisteerError(Exception):
    """Base class for package-level failures."""


class ConfigError(VisteerError):
    """Invalid or contradictory configuration."""


class SceneError(VisteerError):
    """A scene request names an unknown family / split combination."""


class DecompositionError(VisteerError):
    """Instruction outside the supported grammar.

    ``span`` holds the offending fragment so error messages can point at it.
    """

    def __init__(self, message: str, span: str):
        super().__init__(f"{message}: {span!r}")
        self.span = span


class NoMatchError(VisteerError):
    """A segmentation query named a noun with no entity in the scene."""


class EmptyMaskError(VisteerError):
    """Centroid requested for a mask with zero foreground pixels."""


class PromptError(VisteerError):
    """Visual prompt violates its preconditions (no fields, bad box, ...)."""


class PromptUnavailableError(VisteerError):
    """The planner could not produce a prompt for the active subtask."""


class OracleUnavailableError(VisteerError):
    """The scripted controller has no prompt to act on."""


class ExpertStuckError(VisteerError):
    """The demonstration expert failed to finish within the step cap."""


class ProtocolError(VisteerError):
    """Wire message failed validation.

    ``field_path`` is a dotted path into the offending payload.
    """

    def __init__(self, message: str, field_path: str):
        super().__init__(f"{message} (at {field_path})")
        self.field_path = field_path


class CheckpointError(VisteerError):
    """Checkpoint file is truncated, corrupt, or config-incompatible."""


class DataError(VisteerError):
    """Dataset artifact is malformed or fails an integrity check."""


class AnnotationError(VisteerError):
    """A recorded episode cannot be annotated consistently."""


class DivergenceError(VisteerError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int, checkpoint_path: str | None):
        super().__init__(message)
        self.step = step
        self.checkpoint_path = checkpoint_path


class SessionError(VisteerError):
    """Live session command was invalid for the session's mode or state."""
