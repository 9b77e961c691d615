"""Shared builders for the test suite.

The ten-node history and the example delta logs are committed fixtures:
deterministic constructions whose derived expectations (character ratios,
descriptor coordinates, scores) are frozen into the tests that use them.
"""

from __future__ import annotations

import numpy as np
import pytest

from deltaevolve.database import EvolutionDatabase, Node, TokenCount
from deltaevolve.delta_codec import DeltaModification, DeltaPlan, DeltaSummary
from deltaevolve.evaluators.base import EvaluationReport

WORDS = (
    "grid anneal swap probe clamp budget restart basin spiral greedy descent "
    "mirror jitter scale rank prune merge split orbit walk pivot sweep dwell "
    "quench drift focus spread bound tighten relax nudge rotate pack shrink"
).split()


def make_report(
    score: float, feedback: str = "ok", valid: bool = True
) -> EvaluationReport:
    return EvaluationReport(
        combined_score=score if valid else 0.0,
        per_case={"case": score} if valid else {},
        valid=valid,
        feedback=feedback,
        evals_used={},
        wall_time=0.0,
    )


def make_summary(tag: str = "x") -> DeltaSummary:
    return DeltaSummary(
        from_strategy=f"Plain greedy placement driven by {tag} ordering.",
        to_strategy=f"Annealed placement with {tag}-scaled restarts.",
    )


def make_plan(tag: str = "x", mods: int = 1) -> DeltaPlan:
    return DeltaPlan(
        modifications=tuple(
            DeltaModification(
                component=f"Stage {k} ({tag})",
                old_logic=f"Fixed step of 0.1 in stage {k}.",
                new_logic=f"Step grows to 0.3 with {tag} damping in stage {k}.",
                hypothesis=f"Larger early steps explore the {tag} basin faster.",
            )
            for k in range(1, mods + 1)
        )
    )


def synthetic_program(index: int, length: int = 2000) -> str:
    """Deterministic pseudo-program of roughly ``length`` characters."""
    rng = np.random.default_rng(1000 + index)
    lines = [f"# candidate {index}"]
    while sum(len(l) + 1 for l in lines) < length:
        picks = rng.choice(len(WORDS), size=6)
        body = "_".join(WORDS[int(p) % len(WORDS)] for p in picks)
        value = rng.random() * 10
        lines.append(f"{body} = {value:.6f}")
    return "\n".join(lines)


def make_node(
    db: EvolutionDatabase,
    node_id: str,
    iteration: int,
    score: float,
    parent_id: str | None = None,
    island: int = 0,
    code: str | None = None,
    feedback: str | None = None,
    valid: bool = True,
) -> Node:
    code = code if code is not None else synthetic_program(iteration)
    seeded = parent_id is None
    return Node(
        id=node_id,
        parent_id=parent_id,
        island=island,
        iteration=iteration,
        code=code,
        summary=None if seeded else make_summary(node_id),
        plan=None if seeded else make_plan(node_id),
        report=make_report(score, feedback or f"score map {score:.4f}", valid),
        descriptor=db.descriptor(code),
        tokens=TokenCount(),
    )


def ten_node_history(islands: int = 1) -> EvolutionDatabase:
    """Chain of one seed plus nine children; programs ~2,000 characters,
    rendered deltas ~300 characters."""
    db = EvolutionDatabase(islands=islands, population_size=40, archive_size=20)
    scores = [0.30, 0.35, 0.32, 0.41, 0.47, 0.44, 0.52, 0.58, 0.55, 0.63]
    db.insert(make_node(db, "n00000", 0, scores[0]))
    for i in range(1, 10):
        db.insert(
            make_node(db, f"n{i:05d}", i, scores[i], parent_id=f"n{i - 1:05d}")
        )
    return db


def strip_timing(obj):
    """Drop wall-clock fields so state comparisons are timing-independent."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


# Example delta logs in the documented output format, used as parse fixtures.

LEVEL1_EXAMPLE_FROM = (
    "Uniform random sampling with occasional fixed-size local perturbations "
    "(5 Gaussian tries at 5% range) and greedy replacement."
)

LEVEL1_EXAMPLE_TO = (
    "A two-phase budget-aware optimizer: Latin Hypercube initialization "
    "(n_init = min(max(10,4*dim), max(1,budget//3))) followed by an adaptive "
    "batched per-dimension Gaussian local search (sigma init = 0.2*span, grow "
    "* 1.2 on success, shrink *0.5 on stagnation with patience = max(3,dim), "
    "batch = min(10, remaining//10), exploitation p=0.8) plus occasional "
    "global probes and strict budget accounting."
)

LEVEL1_EXAMPLE_TEXT = f"""FROM: {LEVEL1_EXAMPLE_FROM}

TO: {LEVEL1_EXAMPLE_TO}"""

LEVEL2_EXAMPLE_TEXT = """[Modification 1]
COMPONENT:   Initialization Strategy (Latin Hypercube)
OLD_LOGIC:  n_init = min(max(10, 4*dimension), max(1, budget//4)); per-dimension shuffle of midpoints with jitter = (rng.random - 0.5)/n_init.
NEW_LOGIC:  n_init = min(max(10, 4*dimension), max(1, budget//3)), then clamp n_init below max(1, budget-2) to leave two evaluations. Construct full LHS by computing base midpoints base[i] = (i+0.5)/n_init, generating a random permutation idx per-dimension, forming perms[:,d] = base[idx], then adding jitter = (rng.random((n_init,dimension))-0.5)/(n_init*3.0) and clipping to [0,1]. Map to box via lower + sample*span.
HYPOTHESIS:  Full-permutation LHS with slightly more initialization samples improves space-filling coverage; smaller jitter reduces boundary bias while keeping diversity; leaving two evals ensures immediate subsequent polish/search.

[Modification 2]
COMPONENT:   Initialization Polishing (Coordinate Refinement)
OLD_LOGIC:  Single small-radius sweep: refine_evals = min(budget-evals, min(2*dim,10)), radius = 0.05*span, try +/- on each coordinate once.
NEW_LOGIC:  Multi-scale polish with refine_evals = min(budget-evals, min(3*dim,15)). Iterate scales = [0.2, 0.05, 0.01]; for each scale, compute radius = scale*span and for each dimension try +/- radius while budget remains; accept and update best, and bias current_x/current_val to improvements immediately.
HYPOTHESIS:  Many benchmark functions are separable or have strong one-dimensional curvature; coarse-to-fine coordinate probes (0.2 then 0.05 then 0.01) cheaply discover large improvements early and avoid wasting many evaluations at a single tiny scale.

[Modification 3]
COMPONENT:   Step-size Initialization and Lower Bound
OLD_LOGIC:  initial_step = 0.1*span; min_step = 1e-8*span; grow=1.3/shrink=0.7.
NEW_LOGIC:  initial_step = 0.2*span; min_step = 1e-6*span (keep grow=1.3, shrink=0.7); clamp step updates as before but with the new numeric bounds.
HYPOTHESIS:  A slightly larger initial step accelerates early descent and exploration; enforcing a minimum of 1e-6*span reduces chance of adaptation getting stuck on numerically negligible steps, improving robustness across varying dimensions."""

LEVEL1_EXAMPLE_CASE_MAP = {
    "sphere_d3_i1": 0.699,
    "rosenbrock_d5_i2": 0.703,
    "rastrigin_d10_i5": 4.354,
    "ellipsoid_d20_i1": 1.270,
    "schaffers_d40_i5": 0.700,
}

LEVEL1_EXAMPLE_RESULTS_TEXT = (
    '{ stage1_cases: {   "sphere_d3_i1": 0.699 } | stage2_cases: '
    '{   "rosenbrock_d5_i2": 0.703,   "rastrigin_d10_i5": 4.354,   '
    '"ellipsoid_d20_i1": 1.270,   "schaffers_d40_i5": 0.700 } }'
)


@pytest.fixture
def ten_node_db() -> EvolutionDatabase:
    return ten_node_history()
