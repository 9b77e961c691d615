from __future__ import annotations

import json
import math
import sys
import textwrap

import mpmath
import numpy as np
import pytest

from conftest import LEVEL1_EXAMPLE_CASE_MAP, LEVEL1_EXAMPLE_RESULTS_TEXT
from deltaevolve.evaluators import parse_case_map, format_two_stage_feedback
from deltaevolve.evaluators.bbob import (
    BbobCase,
    DimensionMismatch,
    NonFiniteInput,
    OracleTimeout,
    ProtocolViolation,
    bbob_value,
    build_cases,
    evaluate_bbob,
    instance_shift,
    oracle_serve,
    score_case,
)
from deltaevolve.evaluators.bbob_references import REFERENCE_VALUES
from deltaevolve.tasks import RANDOM_SEARCH_PROGRAM, bbob_task


def case(function, dimension, instance=1, budget=100, v_ref=0.0):
    return BbobCase(
        function=function,
        dimension=dimension,
        instance=instance,
        budget=budget,
        v_ref=v_ref,
    )


class TestFunctions:
    def test_sphere_zero_at_shift(self):
        c = case("sphere", 3)
        shift = instance_shift("sphere", 3, 1)
        assert bbob_value(c, shift) == pytest.approx(0.0, abs=1e-20)

    def test_rosenbrock_optimum_at_shift_plus_one(self):
        c = case("rosenbrock", 2)
        shift = instance_shift("rosenbrock", 2, 1)
        assert bbob_value(c, shift + 1.0) == pytest.approx(0.0, abs=1e-18)

    def test_rastrigin_against_high_precision_oracle(self):
        # Independent oracle: evaluate the defining formula with mpmath at 50
        # digits for z = (0.5, 0.5, 0.5).
        mpmath.mp.dps = 50
        z = [mpmath.mpf("0.5")] * 3
        expected = 10 * 3 + sum(zi**2 - 10 * mpmath.cos(2 * mpmath.pi * zi) for zi in z)
        c = case("rastrigin", 3)
        x = instance_shift("rastrigin", 3, 1) + 0.5
        assert bbob_value(c, x) == pytest.approx(float(expected), abs=1e-9)
        assert float(expected) == pytest.approx(60.75, abs=1e-30)

    def test_ellipsoid_conditioning_spans_six_decades(self):
        c = case("ellipsoid", 5)
        shift = instance_shift("ellipsoid", 5, 1)
        e_first = bbob_value(c, shift + np.array([1, 0, 0, 0, 0], dtype=float))
        e_last = bbob_value(c, shift + np.array([0, 0, 0, 0, 1], dtype=float))
        assert e_first == pytest.approx(1.0)
        assert e_last == pytest.approx(1e6)

    def test_schaffers_zero_at_shift(self):
        c = case("schaffers", 4)
        shift = instance_shift("schaffers", 4, 1)
        assert bbob_value(c, shift) == pytest.approx(0.0, abs=1e-18)

    def test_schaffers_against_high_precision_oracle(self):
        mpmath.mp.dps = 50
        z = [mpmath.mpf(v) for v in ("0.3", "-1.2", "2.0")]
        s = [mpmath.sqrt(z[i] ** 2 + z[i + 1] ** 2) for i in range(2)]
        total = sum(
            mpmath.sqrt(si) + mpmath.sqrt(si) * mpmath.sin(50 * si ** mpmath.mpf("0.2")) ** 2
            for si in s
        )
        expected = float((total / 2) ** 2)
        c = case("schaffers", 3)
        x = instance_shift("schaffers", 3, 1) + np.array([0.3, -1.2, 2.0])
        assert bbob_value(c, x) == pytest.approx(expected, rel=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            bbob_value(case("sphere", 3), [1.0, 2.0])

    def test_non_finite_input(self):
        with pytest.raises(NonFiniteInput):
            bbob_value(case("sphere", 2), [float("nan"), 0.0])

    def test_instance_shifts_differ_and_stay_in_range(self):
        a = instance_shift("sphere", 3, 1)
        b = instance_shift("sphere", 3, 2)
        assert not np.allclose(a, b)
        for shift in (a, b):
            assert np.all(np.abs(shift) <= 4.0)

    def test_instance_shift_is_stable(self):
        # Frozen fixture: the shift derivation must never drift between runs
        # or platforms, or stored reference values become meaningless.
        again = instance_shift("sphere", 3, 1)
        assert np.array_equal(again, instance_shift("sphere", 3, 1))


class TestScoreCase:
    def test_reference_match_with_spent_budget(self):
        assert score_case(5.0, 5.0, 100, 100) == pytest.approx(0.7, abs=1e-12)

    def test_halved_reference_with_untouched_budget(self):
        assert score_case(5.0, 10.0, 0, 100) == pytest.approx(1.35, abs=1e-12)

    def test_doubled_reference_with_half_budget(self):
        assert score_case(20.0, 10.0, 50, 100) == pytest.approx(0.5, abs=1e-12)

    def test_monotonicity_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v_ref = float(rng.normal(0, 10))
            v_best = float(rng.normal(0, 10))
            budget = int(rng.integers(1, 1000))
            n_used = int(rng.integers(0, budget + 1))
            base = score_case(v_best, v_ref, n_used, budget)
            worse_value = score_case(v_best + abs(rng.normal(0, 5)) + 1e-9, v_ref, n_used, budget)
            assert worse_value <= base + 1e-12
            if n_used < budget:
                more_evals = score_case(v_best, v_ref, int(rng.integers(n_used, budget + 1)), budget)
                assert more_evals <= base + 1e-12

    def test_non_finite_best_rejected(self):
        with pytest.raises(NonFiniteInput):
            score_case(float("inf"), 1.0, 0, 10)

    def test_near_zero_reference_guarded(self):
        assert math.isfinite(score_case(0.0, 0.0, 0, 10))


class TestFeedbackFormat:
    def test_example_results_text_parses(self):
        assert parse_case_map(LEVEL1_EXAMPLE_RESULTS_TEXT) == LEVEL1_EXAMPLE_CASE_MAP

    def test_emitted_feedback_round_trips(self):
        text = format_two_stage_feedback(
            {"sphere_d3_i1": 0.699}, {"rosenbrock_d5_i2": 0.703}
        )
        assert parse_case_map(text) == {
            "sphere_d3_i1": 0.699,
            "rosenbrock_d5_i2": 0.703,
        }


def direct_solution_document(offset: float = 0.0) -> str:
    doc = {}
    for entry in build_cases(bbob_task(kind="direct-solution")):
        shift = instance_shift(entry.function, entry.dimension, entry.instance)
        doc[entry.case_id] = list(np.clip(shift + offset, -5.0, 5.0))
    return json.dumps(doc)


class TestEvaluateBbobDirect:
    def test_shift_solutions_score_by_formula(self):
        task = bbob_task(kind="direct-solution")
        report = evaluate_bbob(task, direct_solution_document())
        assert report.valid
        for entry in build_cases(task):
            v_best = bbob_value(
                entry, instance_shift(entry.function, entry.dimension, entry.instance)
            )
            expected = score_case(v_best, entry.v_ref, 0, entry.budget)
            assert report.per_case[entry.case_id] == pytest.approx(expected, abs=1e-12)
        assert report.combined_score == pytest.approx(
            sum(report.per_case.values()) / len(report.per_case), abs=1e-12
        )

    def test_bound_violation_fails_stage_one(self):
        task = bbob_task(kind="direct-solution")
        doc = json.loads(direct_solution_document())
        doc["sphere_d3_i1"][0] = 6.0
        report = evaluate_bbob(task, json.dumps(doc))
        assert not report.valid
        assert report.combined_score == 0.0
        assert "stage 1" in report.feedback
        assert "bound" in report.feedback

    def test_stage_two_not_run_when_stage_one_fails(self):
        task = bbob_task(kind="direct-solution")
        report = evaluate_bbob(task, json.dumps({"not_a_case": [0.0]}))
        assert not report.valid
        assert report.per_case == {}

    def test_unparseable_document_invalid(self):
        report = evaluate_bbob(bbob_task(kind="direct-solution"), "not json")
        assert not report.valid

    def test_missing_stage_two_case_zeroes_that_case(self):
        task = bbob_task(kind="direct-solution")
        doc = json.loads(direct_solution_document())
        del doc["rastrigin_d10_i5"]
        report = evaluate_bbob(task, json.dumps(doc))
        assert report.valid
        assert report.per_case["rastrigin_d10_i5"] == 0.0
        assert "rastrigin_d10_i5" in report.feedback


IMMEDIATE_FINAL = textwrap.dedent(
    """\
    import json, sys
    problem = json.loads(sys.stdin.readline())["problem"]
    print(json.dumps({"final": %s}), flush=True)
    """
)

OVER_BUDGET = textwrap.dedent(
    """\
    import json, sys
    problem = json.loads(sys.stdin.readline())["problem"]
    dim = problem["dimension"]
    replies = []
    for _ in range(problem["budget"] + 1):
        print(json.dumps({"eval": [0.0] * dim}), flush=True)
        replies.append(json.loads(sys.stdin.readline()))
    print(json.dumps({"final": [0.0] * dim}), flush=True)
    """
)


def run_candidate_source(source: str, case_, timeout=20.0, seed=0):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as workdir:
        path = Path(workdir) / "cand.py"
        path.write_text(source)
        return oracle_serve([sys.executable, str(path)], case_, timeout=timeout, seed=seed)


class TestOracleProtocol:
    def test_immediate_final_uses_one_verification_eval(self):
        c = case("sphere", 3, budget=50)
        shift = instance_shift("sphere", 3, 1)
        result = run_candidate_source(
            IMMEDIATE_FINAL % json.dumps(list(shift)), c
        )
        assert result.n_used == 0
        assert result.v_best == pytest.approx(0.0, abs=1e-18)

    def test_budget_enforced_and_recorded(self):
        c = case("sphere", 2, budget=5)
        result = run_candidate_source(OVER_BUDGET, c)
        assert result.n_used == 5
        assert any("BudgetExceeded" in line for line in result.trace)

    def test_random_search_matches_in_process_replay(self):
        # In-process oracle: replay the exact seeded uniform stream the
        # committed random-search candidate uses.
        import random

        c = case("sphere", 3, budget=100)
        result = run_candidate_source(RANDOM_SEARCH_PROGRAM, c, seed=0)
        rng = random.Random(0)
        best = math.inf
        for _ in range(100):
            x = [rng.uniform(-5.0, 5.0) for _ in range(3)]
            best = min(best, bbob_value(c, x))
        assert result.n_used == 100
        assert result.v_best == pytest.approx(best, abs=0.0)

    def test_out_of_bounds_eval_is_violation(self):
        source = IMMEDIATE_FINAL % "[9.0, 0.0]"
        with pytest.raises(ProtocolViolation):
            run_candidate_source(source, case("sphere", 2, budget=5))

    def test_garbage_output_is_violation(self):
        source = 'import sys\nsys.stdin.readline()\nprint("not json", flush=True)\n'
        with pytest.raises(ProtocolViolation):
            run_candidate_source(source, case("sphere", 2, budget=5))

    def test_exit_without_final_is_violation(self):
        source = "import sys\nsys.stdin.readline()\n"
        with pytest.raises(ProtocolViolation):
            run_candidate_source(source, case("sphere", 2, budget=5))

    def test_timeout_kills_candidate(self):
        source = "import time, sys\nsys.stdin.readline()\ntime.sleep(60)\n"
        with pytest.raises(OracleTimeout):
            run_candidate_source(source, case("sphere", 2, budget=5), timeout=1.5)


class TestEvaluateBbobProgram:
    def test_random_search_seed_program_reports(self):
        task = bbob_task(parameters={"budget": 60})
        report = evaluate_bbob(task, RANDOM_SEARCH_PROGRAM)
        assert report.valid
        assert set(report.per_case) == set(REFERENCE_VALUES)
        assert all(n == 60 for n in report.evals_used.values())
        assert parse_case_map(report.feedback)

    def test_crashing_program_fails_stage_one(self):
        task = bbob_task(parameters={"budget": 10})
        report = evaluate_bbob(task, "raise RuntimeError('no')")
        assert not report.valid
        assert "stage 1" in report.feedback
