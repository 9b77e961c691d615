"""Subprocess bridge to external evaluator commands.

The candidate text is written to a temp file and the configured command is
invoked with that path as its last argument. The command must print a JSON
report on stdout with at least ``combined_score`` (``score`` is accepted as
an alias) and optionally ``per_case`` and ``feedback``. Timeouts, nonzero
exits, and unparseable reports all become invalid evaluation reports.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import time
from pathlib import Path

from .base import EvaluationReport, invalid_report


class LaunchFailure(RuntimeError):
    """The evaluator command could not be started at all."""


def _extract_report(stdout: str) -> dict:
    try:
        doc = json.loads(stdout)
        if isinstance(doc, dict):
            return doc
    except json.JSONDecodeError:
        pass
    # Tolerate logging noise around the report: take the last parseable line.
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    raise ValueError("no JSON report object found on stdout")


def external_evaluate(
    command: list[str], candidate: str, timeout: float = 300.0
) -> EvaluationReport:
    start = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="external-eval-") as workdir:
        path = Path(workdir) / "candidate.txt"
        path.write_text(candidate)
        try:
            proc = subprocess.run(
                list(command) + [str(path)],
                capture_output=True,
                text=True,
                timeout=timeout,
                cwd=workdir,
            )
        except subprocess.TimeoutExpired:
            return invalid_report(
                f"external evaluator timed out after {timeout}s",
                wall_time=time.monotonic() - start,
            )
        except OSError as exc:
            raise LaunchFailure(f"could not launch evaluator {command!r}: {exc}") from exc

    wall_time = time.monotonic() - start
    if proc.returncode != 0:
        return invalid_report(
            f"external evaluator exited with status {proc.returncode}: "
            f"{proc.stderr.strip()[:200]}",
            wall_time=wall_time,
        )
    try:
        doc = _extract_report(proc.stdout)
    except ValueError as exc:
        return invalid_report(f"malformed report: {exc}", wall_time=wall_time)

    score = doc.get("combined_score", doc.get("score"))
    if not isinstance(score, (int, float)):
        return invalid_report(
            "malformed report: missing numeric combined_score", wall_time=wall_time
        )
    per_case = doc.get("per_case", {})
    if not isinstance(per_case, dict):
        per_case = {}
    return EvaluationReport(
        combined_score=float(score),
        per_case={str(k): float(v) for k, v in per_case.items()},
        valid=True,
        feedback=str(doc.get("feedback", "")),
        evals_used={},
        wall_time=wall_time,
    )
