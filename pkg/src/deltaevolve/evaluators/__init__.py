"""Candidate evaluation: built-in benchmark tasks plus external commands."""

from __future__ import annotations

import shlex

from .base import (
    KIND_DIRECT,
    KIND_EXTERNAL,
    KIND_ORACLE,
    EvaluationReport,
    TaskSpec,
    format_case_map,
    format_two_stage_feedback,
    invalid_report,
    parse_case_map,
)
from .bbob import BbobCase, bbob_value, evaluate_bbob, oracle_serve, score_case
from .external import LaunchFailure, external_evaluate
from .hexpack import (
    HexLayout,
    baseline_lattice_layout,
    evaluate_packing,
    hex_vertices,
    layout_to_json,
    parse_layout,
    sat_disjoint,
    validate_packing,
)

_BUILTIN_EVALUATORS = {
    "bbob": evaluate_bbob,
    "hexagon": evaluate_packing,
}


def evaluate(task: TaskSpec, candidate: str) -> EvaluationReport:
    """Route a candidate to the evaluator selected by the task."""
    if task.kind == KIND_EXTERNAL:
        command = task.param("command")
        if not command:
            raise ValueError("external-evaluator tasks need a 'command' parameter")
        if isinstance(command, str):
            command = shlex.split(command)
        return external_evaluate(command, candidate, timeout=task.timeout)
    family = task.param("evaluator")
    if family not in _BUILTIN_EVALUATORS:
        raise ValueError(f"task {task.name!r} names no built-in evaluator ({family!r})")
    return _BUILTIN_EVALUATORS[family](task, candidate)


__all__ = [
    "BbobCase",
    "EvaluationReport",
    "HexLayout",
    "KIND_DIRECT",
    "KIND_EXTERNAL",
    "KIND_ORACLE",
    "LaunchFailure",
    "TaskSpec",
    "baseline_lattice_layout",
    "bbob_value",
    "evaluate",
    "evaluate_bbob",
    "evaluate_packing",
    "external_evaluate",
    "format_case_map",
    "format_two_stage_feedback",
    "hex_vertices",
    "invalid_report",
    "layout_to_json",
    "oracle_serve",
    "parse_case_map",
    "parse_layout",
    "sat_disjoint",
    "score_case",
    "validate_packing",
]
