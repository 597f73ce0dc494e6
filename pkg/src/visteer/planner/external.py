"""HTTP client for an external planner speaking the documented protocol."""

from __future__ import annotations

import requests

from ..errors import ProtocolError
from ..render import Observation
from .decide import PlannerDecision, StateSummary
from .grammar import SubtaskPlan, parse_subtask
from .protocol import (
    build_decompose_request,
    build_detect_request,
    parse_decompose_response,
    parse_detect_response,
)

DEFAULT_TIMEOUT = 2.0


class ExternalPlannerClient:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def decompose(self, instruction: str) -> SubtaskPlan:
        resp = requests.post(
            f"{self.base_url}/decompose",
            json=build_decompose_request(instruction),
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise ProtocolError(f"decompose returned HTTP {resp.status_code}", "<http>")
        texts = parse_decompose_response(resp.json())
        return SubtaskPlan(instruction, [parse_subtask(t) for t in texts])

    def detect(
        self,
        plan: SubtaskPlan,
        summary: StateSummary,
        obs: Observation | None,
        prev_obs: Observation | None,
    ) -> PlannerDecision:
        resp = requests.post(
            f"{self.base_url}/detect",
            json=build_detect_request(plan, summary, prev_obs=prev_obs, obs=obs),
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise ProtocolError(f"detect returned HTTP {resp.status_code}", "<http>")
        return parse_detect_response(resp.json())
