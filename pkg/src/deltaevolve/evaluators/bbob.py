"""Black-box optimization benchmark: functions, scoring, and the oracle loop.

Five classic benchmark functions are evaluated on seed-derived shifted
instances. Candidate optimizers never see the analytic form: direct-solution
candidates submit one vector per case, and program candidates are run as
subprocesses speaking a line-delimited JSON protocol
(:func:`oracle_serve`) that exposes only dimension, bounds, budget, and a
seed.

Scoring follows a two-stage protocol: the first case acts as a validity
filter, and only candidates that pass it are scored on the remaining cases.
"""

from __future__ import annotations

import hashlib
import json
import math
import shlex
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from queue import Empty, Queue

import numpy as np

from .base import (
    KIND_DIRECT,
    KIND_ORACLE,
    EvaluationReport,
    TaskSpec,
    format_two_stage_feedback,
    invalid_report,
)
from .bbob_references import REFERENCE_VALUES

FUNCTION_NAMES = ("sphere", "rosenbrock", "rastrigin", "ellipsoid", "schaffers")

DEFAULT_BOUND = 5.0
SHIFT_RANGE = 4.0  # instance optima are shifted uniformly within [-4, 4]^d
REF_DENOMINATOR_FLOOR = 1e-12

DEFAULT_CASES = (
    ("sphere", 3, 1),
    ("rosenbrock", 5, 2),
    ("rastrigin", 10, 5),
    ("ellipsoid", 20, 1),
    ("schaffers", 40, 5),
)


class DimensionMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class OracleError(RuntimeError):
    """Base class for failures of a program candidate under the oracle."""


class OracleTimeout(OracleError):
    pass


class ProtocolViolation(OracleError):
    pass


class NonZeroExit(OracleError):
    pass


@dataclass(frozen=True)
class BbobCase:
    function: str
    dimension: int
    instance: int
    lower: float = -DEFAULT_BOUND
    upper: float = DEFAULT_BOUND
    budget: int = 1000
    v_ref: float = 0.0

    def __post_init__(self) -> None:
        if self.function not in FUNCTION_NAMES:
            raise ValueError(f"unknown function {self.function!r}")
        if self.dimension < 1 or self.budget < 1:
            raise ValueError("dimension and budget must be >= 1")
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")

    @property
    def case_id(self) -> str:
        return f"{self.function}_d{self.dimension}_i{self.instance}"


@dataclass
class OracleResult:
    v_best: float
    n_used: int
    trace: list[str] = field(default_factory=list)


def instance_shift(function: str, dimension: int, instance: int) -> np.ndarray:
    """Deterministic per-instance optimum shift, stable across platforms."""
    key = f"{function}_d{dimension}_i{instance}".encode("utf-8")
    seed = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")
    rng = np.random.default_rng(seed)
    return rng.uniform(-SHIFT_RANGE, SHIFT_RANGE, size=dimension)


def _sphere(z: np.ndarray) -> float:
    return float(np.sum(z * z))


def _rosenbrock(z: np.ndarray) -> float:
    if z.shape[0] < 2:
        return float((1.0 - z[0]) ** 2)
    return float(
        np.sum(100.0 * (z[1:] - z[:-1] ** 2) ** 2 + (1.0 - z[:-1]) ** 2)
    )


def _rastrigin(z: np.ndarray) -> float:
    d = z.shape[0]
    return float(10.0 * d + np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z)))


def _ellipsoid(z: np.ndarray) -> float:
    d = z.shape[0]
    if d == 1:
        return float(z[0] * z[0])
    exponents = 6.0 * np.arange(d) / (d - 1)
    return float(np.sum(10.0**exponents * z * z))


def _schaffers_f7(z: np.ndarray) -> float:
    d = z.shape[0]
    if d < 2:
        return float(np.abs(z[0]))
    s = np.sqrt(z[:-1] ** 2 + z[1:] ** 2)
    root = np.sqrt(s)
    total = np.sum(root + root * np.sin(50.0 * s**0.2) ** 2)
    return float((total / (d - 1)) ** 2)


_BASE_FUNCTIONS = {
    "sphere": _sphere,
    "rosenbrock": _rosenbrock,
    "rastrigin": _rastrigin,
    "ellipsoid": _ellipsoid,
    "schaffers": _schaffers_f7,
}


def bbob_value(case: BbobCase, x: np.ndarray | list[float]) -> float:
    """Evaluate the shifted benchmark function at ``x``."""
    vec = np.asarray(x, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != case.dimension:
        raise DimensionMismatch(
            f"{case.case_id}: expected a vector of length {case.dimension}, "
            f"got shape {vec.shape}"
        )
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInput(f"{case.case_id}: input contains non-finite entries")
    z = vec - instance_shift(case.function, case.dimension, case.instance)
    return _BASE_FUNCTIONS[case.function](z)


def score_case(v_best: float, v_ref: float, n_used: int, n_budget: int) -> float:
    """Blend solution quality and evaluation efficiency into one case score.

    Quality: delta = (v_ref - v_best) / max(|v_ref|, floor); the value term is
    1 + delta when the candidate matches or beats the reference, and
    1 / (1 + |delta|) otherwise. Efficiency: the unused fraction of the
    evaluation budget, clamped at 0. The case score is
    0.7 * value + 0.3 * efficiency.
    """
    if n_budget < 1:
        raise ValueError("n_budget must be >= 1")
    if not math.isfinite(v_ref):
        raise ValueError("v_ref must be finite")
    if not math.isfinite(v_best):
        raise NonFiniteInput("v_best is not finite")
    delta = (v_ref - v_best) / max(abs(v_ref), REF_DENOMINATOR_FLOOR)
    if v_best <= v_ref:
        s_val = 1.0 + delta
    else:
        s_val = 1.0 / (1.0 + abs(delta))
    efficiency = max(0.0, 1.0 - n_used / n_budget)
    return 0.7 * s_val + 0.3 * efficiency


def build_cases(task: TaskSpec) -> list[BbobCase]:
    """Materialize the task's case list, filling reference values from the
    committed fixtures unless the task overrides them."""
    budget = int(task.param("budget", 1000))
    raw_cases = task.param("cases")
    cases = []
    if raw_cases is None:
        raw_cases = [
            {"function": f, "dimension": d, "instance": i}
            for f, d, i in DEFAULT_CASES
        ]
    for entry in raw_cases:
        case_id = f"{entry['function']}_d{entry['dimension']}_i{entry['instance']}"
        v_ref = entry.get("v_ref")
        if v_ref is None:
            if case_id not in REFERENCE_VALUES:
                raise ValueError(f"no committed reference value for case {case_id}")
            v_ref = REFERENCE_VALUES[case_id]
        cases.append(
            BbobCase(
                function=entry["function"],
                dimension=int(entry["dimension"]),
                instance=int(entry["instance"]),
                budget=int(entry.get("budget", budget)),
                v_ref=float(v_ref),
            )
        )
    return cases


class _LineReader:
    """Reads subprocess stdout lines on a daemon thread with deadlines."""

    def __init__(self, stream) -> None:
        self._queue: Queue[str | None] = Queue()
        self._thread = threading.Thread(
            target=self._pump, args=(stream,), daemon=True
        )
        self._thread.start()

    def _pump(self, stream) -> None:
        try:
            for line in stream:
                self._queue.put(line)
        finally:
            self._queue.put(None)

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=max(0.0, timeout))
        except Empty:
            raise OracleTimeout("candidate produced no output before the deadline")


def oracle_serve(
    program_command: str | list[str],
    case: BbobCase,
    timeout: float = 300.0,
    seed: int = 0,
) -> OracleResult:
    """Run a candidate optimizer as a subprocess against one case.

    Protocol (one JSON object per line on stdin/stdout):

    * harness -> ``{"problem": {"dimension", "bounds", "budget", "seed"}}``
    * candidate -> ``{"eval": [x..]}``; harness -> ``{"value": f}``
    * candidate -> ``{"final": [x..]}`` terminates the dialogue.

    Evaluation requests beyond the budget receive ``{"error": ...}`` and are
    not counted. Out-of-bounds or non-finite points abort the case. The
    process is killed at the deadline.
    """
    command = shlex.split(program_command) if isinstance(program_command, str) else list(program_command)
    deadline = time.monotonic() + timeout
    trace: list[str] = []
    workspace = tempfile.TemporaryDirectory(prefix="oracle-case-")
    try:
        proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
            cwd=workspace.name,
        )
    except OSError as exc:
        workspace.cleanup()
        raise OracleError(f"failed to launch candidate: {exc}") from exc

    reader = _LineReader(proc.stdout)
    n_used = 0
    v_best = math.inf
    saw_final = False

    def send(message: dict) -> None:
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolViolation(f"candidate closed stdin pipe: {exc}") from exc

    def check_point(raw) -> np.ndarray:
        vec = np.asarray(raw, dtype=float)
        if vec.ndim != 1 or vec.shape[0] != case.dimension:
            raise ProtocolViolation(
                f"expected a vector of length {case.dimension}, got {raw!r}"
            )
        if not np.all(np.isfinite(vec)):
            raise ProtocolViolation("point contains non-finite coordinates")
        if np.any(vec < case.lower) or np.any(vec > case.upper):
            worst = int(np.argmax(np.maximum(case.lower - vec, vec - case.upper)))
            raise ProtocolViolation(
                f"coordinate {worst} = {vec[worst]} violates bounds "
                f"[{case.lower}, {case.upper}]"
            )
        return vec

    try:
        send(
            {
                "problem": {
                    "dimension": case.dimension,
                    "bounds": [case.lower, case.upper],
                    "budget": case.budget,
                    "seed": seed,
                }
            }
        )
        while True:
            line = reader.readline(deadline - time.monotonic())
            if line is None:
                raise ProtocolViolation("candidate exited before sending a final point")
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolViolation(f"unparseable message {line[:80]!r}") from exc
            if "eval" in message:
                if n_used >= case.budget:
                    trace.append("BudgetExceeded: evaluation request beyond budget")
                    send({"error": "budget exhausted"})
                    continue
                point = check_point(message["eval"])
                value = bbob_value(case, point)
                n_used += 1
                if value < v_best:
                    v_best = value
                send({"value": value})
            elif "final" in message:
                point = check_point(message["final"])
                # Verification evaluation: not a value reply, so not counted.
                v_best = min(v_best, bbob_value(case, point))
                saw_final = True
                break
            else:
                raise ProtocolViolation(f"unknown message {line[:80]!r}")
        try:
            returncode = proc.wait(timeout=max(0.1, deadline - time.monotonic()))
        except subprocess.TimeoutExpired:
            raise OracleTimeout("candidate did not exit after sending its final point")
        if returncode != 0:
            raise NonZeroExit(f"candidate exited with status {returncode}")
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
        if proc.stdin and not proc.stdin.closed:
            proc.stdin.close()
        workspace.cleanup()

    if not saw_final or not math.isfinite(v_best):
        raise ProtocolViolation("no finite best value was established")
    return OracleResult(v_best=v_best, n_used=n_used, trace=trace)


def _run_direct_case(case: BbobCase, solutions: dict) -> tuple[float, int]:
    if case.case_id not in solutions:
        raise ProtocolViolation(f"solution document has no entry for {case.case_id}")
    vec = np.asarray(solutions[case.case_id], dtype=float)
    if vec.ndim != 1 or vec.shape[0] != case.dimension:
        raise ProtocolViolation(
            f"{case.case_id}: expected {case.dimension} coordinates, got {vec.shape}"
        )
    if not np.all(np.isfinite(vec)):
        raise ProtocolViolation(f"{case.case_id}: non-finite coordinates")
    if np.any(vec < case.lower) or np.any(vec > case.upper):
        worst = int(np.argmax(np.maximum(case.lower - vec, vec - case.upper)))
        raise ProtocolViolation(
            f"{case.case_id}: coordinate {worst} = {vec[worst]} violates bound "
            f"[{case.lower}, {case.upper}]"
        )
    return bbob_value(case, vec), 0


def evaluate_bbob(task: TaskSpec, candidate: str) -> EvaluationReport:
    """Two-stage evaluation of a candidate on the benchmark case list.

    Stage 1 runs the first case as a validity filter; any failure there makes
    the whole report invalid. Remaining cases are scored individually (a
    stage-2 failure zeroes that case only) and the combined score is the
    unweighted mean of all case scores.
    """
    start = time.monotonic()
    cases = build_cases(task)
    parallel = max(1, int(task.param("parallel_evaluations", 1)))
    oracle_seed = int(task.param("candidate_seed", 0))

    solutions: dict | None = None
    if task.kind == KIND_DIRECT:
        try:
            solutions = json.loads(candidate)
        except json.JSONDecodeError as exc:
            return invalid_report(
                f"stage 1 failed: candidate is not a valid solution document ({exc})",
                wall_time=time.monotonic() - start,
            )
        if not isinstance(solutions, dict):
            return invalid_report(
                "stage 1 failed: solution document must be a JSON object",
                wall_time=time.monotonic() - start,
            )
    elif task.kind != KIND_ORACLE:
        raise ValueError(f"evaluate_bbob cannot handle task kind {task.kind!r}")

    with tempfile.TemporaryDirectory(prefix="bbob-candidate-") as workdir:
        # Oracle candidates arrive as program source; run them with the
        # current interpreter unless the task supplies its own command.
        if solutions is None:
            command = task.param("candidate_command")
            if command is None:
                program_path = Path(workdir) / "candidate.py"
                program_path.write_text(candidate)
                command = [sys.executable, str(program_path)]
            elif isinstance(command, str):
                command = shlex.split(command)

        def run_case(case: BbobCase) -> tuple[float, int]:
            if solutions is not None:
                return _run_direct_case(case, solutions)
            result = oracle_serve(command, case, timeout=task.timeout, seed=oracle_seed)
            return result.v_best, result.n_used

        stage1 = cases[0]
        try:
            v_best, n_used = run_case(stage1)
            stage1_score = score_case(v_best, stage1.v_ref, n_used, stage1.budget)
        except (OracleError, NonFiniteInput, ValueError) as exc:
            return invalid_report(
                f"stage 1 ({stage1.case_id}) failed: {exc}",
                wall_time=time.monotonic() - start,
            )

        per_case: dict[str, float] = {stage1.case_id: stage1_score}
        evals_used: dict[str, int] = {stage1.case_id: n_used}
        failures: list[str] = []

        def run_stage2(case: BbobCase) -> tuple[str, float, int, str | None]:
            try:
                v, n = run_case(case)
                return case.case_id, score_case(v, case.v_ref, n, case.budget), n, None
            except (OracleError, NonFiniteInput, ValueError) as exc:
                return case.case_id, 0.0, 0, str(exc)

        remaining = cases[1:]
        if parallel > 1 and len(remaining) > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                results = list(pool.map(run_stage2, remaining))
        else:
            results = [run_stage2(case) for case in remaining]

    for case_id, score, n, error in results:
        per_case[case_id] = score
        evals_used[case_id] = n
        if error is not None:
            failures.append(f"{case_id}: {error}")

    combined = sum(per_case.values()) / len(per_case)
    feedback = format_two_stage_feedback(
        {stage1.case_id: stage1_score},
        {case_id: per_case[case_id] for case_id, _, _, _ in results},
    )
    if failures:
        feedback += " | failed cases: " + "; ".join(failures)
    return EvaluationReport(
        combined_score=combined,
        per_case=per_case,
        valid=True,
        feedback=feedback,
        evals_used=evals_used,
        wall_time=time.monotonic() - start,
    )
