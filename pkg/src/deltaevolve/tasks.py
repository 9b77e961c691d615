"""Built-in tasks and their baseline seed candidates."""

from __future__ import annotations

import sys

from .evaluators import (
    KIND_DIRECT,
    KIND_ORACLE,
    TaskSpec,
    baseline_lattice_layout,
    layout_to_json,
)

HEXAGON_DESCRIPTION = """\
Pack 11 disjoint unit regular hexagons (side length 1) inside the smallest
possible outer regular hexagon centered at the origin. The solution is a JSON
document with the outer side length and one {x, y, theta} placement per inner
hexagon. A valid solution has no overlapping pair and no vertex outside the
outer boundary (within a small numerical tolerance). The score is the inverse
outer side length 1/R, normalized by a fixed reference density, so smaller
valid outer hexagons score higher."""

BBOB_DESCRIPTION = """\
Write a Python optimizer program that minimizes unknown black-box functions.
The program talks to the harness over stdin/stdout, one JSON object per line:
first it receives {"problem": {"dimension", "bounds", "budget", "seed"}}; it
may then send {"eval": [x, ...]} up to budget times, receiving {"value": f}
for each; it must finish by sending {"final": [x, ...]}. All points must stay
inside the bounds. Each case is scored on both the best value found relative
to a reference and the fraction of the evaluation budget left unused."""

# Baseline optimizer: uniform random search speaking the oracle protocol.
RANDOM_SEARCH_PROGRAM = '''\
import json
import random
import sys


def main():
    problem = json.loads(sys.stdin.readline())["problem"]
    dim = problem["dimension"]
    lower, upper = problem["bounds"]
    budget = problem["budget"]
    rng = random.Random(problem["seed"])

    best_x = [(lower + upper) / 2.0] * dim
    best_v = None
    for _ in range(budget):
        x = [rng.uniform(lower, upper) for _ in range(dim)]
        print(json.dumps({"eval": x}), flush=True)
        reply = json.loads(sys.stdin.readline())
        if "value" not in reply:
            break
        if best_v is None or reply["value"] < best_v:
            best_v = reply["value"]
            best_x = x
    print(json.dumps({"final": best_x}), flush=True)


if __name__ == "__main__":
    main()
'''


def hexagon_task(**overrides) -> TaskSpec:
    parameters = {
        "evaluator": "hexagon",
        "description": HEXAGON_DESCRIPTION,
        "focus_areas": "shrink the outer hexagon while keeping the packing valid",
        "hexagon_count": 11,
        "rho_ref": 0.2544,
        "tolerance": 1e-6,
    }
    parameters.update(overrides.pop("parameters", {}))
    return TaskSpec(
        name="hexagon-packing",
        kind=overrides.pop("kind", KIND_DIRECT),
        parameters=parameters,
        timeout=overrides.pop("timeout", 300.0),
    )


def bbob_task(**overrides) -> TaskSpec:
    parameters = {
        "evaluator": "bbob",
        "description": BBOB_DESCRIPTION,
        "focus_areas": "search strategy, budget use, and bound handling",
        "budget": 1000,
        "candidate_seed": 0,
    }
    parameters.update(overrides.pop("parameters", {}))
    return TaskSpec(
        name="bbob-suite",
        kind=overrides.pop("kind", KIND_ORACLE),
        parameters=parameters,
        timeout=overrides.pop("timeout", 300.0),
    )


BUILTIN_TASKS = {
    "hexagon": hexagon_task,
    "bbob": bbob_task,
}


def builtin_task(name: str, **overrides) -> TaskSpec:
    if name not in BUILTIN_TASKS:
        raise KeyError(f"unknown built-in task {name!r}; known: {sorted(BUILTIN_TASKS)}")
    return BUILTIN_TASKS[name](**overrides)


def seed_candidate(task: TaskSpec) -> str:
    """The baseline candidate evaluated at iteration 0 of a run."""
    family = task.param("evaluator")
    if family == "hexagon":
        return layout_to_json(
            baseline_lattice_layout(count=int(task.param("hexagon_count", 11)))
        )
    if family == "bbob":
        return RANDOM_SEARCH_PROGRAM
    raise ValueError(f"task {task.name!r} has no built-in seed candidate")


def oracle_command_for(program_path: str) -> list[str]:
    """Command line that runs a program candidate under the oracle protocol."""
    return [sys.executable, program_path]
