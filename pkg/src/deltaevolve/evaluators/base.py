"""Shared evaluator types: task descriptions and evaluation reports."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

KIND_DIRECT = "direct-solution"
KIND_ORACLE = "program-oracle"
KIND_EXTERNAL = "external-evaluator"

TASK_KINDS = (KIND_DIRECT, KIND_ORACLE, KIND_EXTERNAL)

_CASE_ENTRY_RE = re.compile(
    r'"([^"]+)"\s*:\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)'
)


@dataclass(frozen=True)
class TaskSpec:
    """What to evaluate and how candidate text is interpreted.

    ``kind`` selects the interpretation: ``direct-solution`` means the
    candidate text *is* the solution document, ``program-oracle`` means it is
    a program the harness runs against a black-box oracle, and
    ``external-evaluator`` delegates scoring to an external command.
    """

    name: str
    kind: str
    parameters: Mapping[str, Any] = field(default_factory=dict)
    timeout: float = 300.0

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")

    def param(self, key: str, default: Any = None) -> Any:
        return self.parameters.get(key, default)


@dataclass(frozen=True)
class EvaluationReport:
    """Outcome of evaluating one candidate.

    ``valid`` is False whenever the candidate failed structurally (crash,
    timeout, constraint violation); invalid reports always carry a combined
    score of 0.
    """

    combined_score: float
    per_case: Mapping[str, float]
    valid: bool
    feedback: str
    evals_used: Mapping[str, int] = field(default_factory=dict)
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if not self.valid and self.combined_score != 0.0:
            raise ValueError("invalid reports must carry combined_score 0")
        if self.valid:
            if not math.isfinite(self.combined_score):
                raise ValueError("valid reports must carry a finite combined score")
            for name, value in self.per_case.items():
                if not math.isfinite(value):
                    raise ValueError(f"per-case value for {name!r} is not finite")


def invalid_report(feedback: str, wall_time: float = 0.0) -> EvaluationReport:
    return EvaluationReport(
        combined_score=0.0,
        per_case={},
        valid=False,
        feedback=feedback,
        evals_used={},
        wall_time=wall_time,
    )


def parse_case_map(text: str) -> dict[str, float]:
    """Extract quoted case-name -> number pairs from a feedback document.

    Lenient by design: it accepts both plain JSON maps and the two-stage
    layout produced by :func:`format_two_stage_feedback`.
    """
    return {name: float(value) for name, value in _CASE_ENTRY_RE.findall(text)}


def format_case_map(values: Mapping[str, float]) -> str:
    body = ", ".join(f'"{name}": {value:.3f}' for name, value in values.items())
    return "{ " + body + " }"


def format_two_stage_feedback(
    stage1: Mapping[str, float], stage2: Mapping[str, float]
) -> str:
    return (
        "{ stage1_cases: "
        + format_case_map(stage1)
        + " | stage2_cases: "
        + format_case_map(stage2)
        + " }"
    )
