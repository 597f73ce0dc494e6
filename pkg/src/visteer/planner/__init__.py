from .grammar import Subtask, SubtaskPlan, decompose, instruction_vocabulary
from .events import TransitionEvent, detect_event, events_from_trace, key_frames
from .segmenter import SegmentCandidate, segment
from .decide import PlannerDecision, StateSummary, advance, build_prompt, summarize_transition
from .session import PlannerSession, PromptUpdate

__all__ = [
    "Subtask",
    "SubtaskPlan",
    "decompose",
    "instruction_vocabulary",
    "TransitionEvent",
    "detect_event",
    "events_from_trace",
    "key_frames",
    "SegmentCandidate",
    "segment",
    "PlannerDecision",
    "StateSummary",
    "advance",
    "build_prompt",
    "summarize_transition",
    "PlannerSession",
    "PromptUpdate",
]
