"""Reference optimizer used to produce committed reference values.

A deliberately simple multi-start coordinate pattern search: good enough to
pin down reference objective values for the benchmark cases, fully
deterministic under a fixed seed, and independent of any candidate optimizer
being scored against those values. Reference values are computed offline by
``scripts/compute_reference_values.py`` and committed; they are never
recomputed during evaluation.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def coordinate_pattern_search(
    func: Callable[[np.ndarray], float],
    lower: np.ndarray,
    upper: np.ndarray,
    budget: int,
    seed: int = 0,
    n_starts: int = 8,
) -> tuple[np.ndarray, float]:
    """Minimize ``func`` over a box with restarts and shrinking axis steps.

    Returns (best point, best value) after at most ``budget`` evaluations.
    """
    rng = np.random.default_rng(seed)
    dim = lower.shape[0]
    span = upper - lower

    evals = 0

    def evaluate(x: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        return float(func(x))

    best_x = (lower + upper) / 2.0
    best_v = evaluate(best_x)

    per_start = max(1, (budget - 1) // n_starts)
    for start_index in range(n_starts):
        if evals >= budget:
            break
        if start_index == 0:
            x = (lower + upper) / 2.0
        else:
            x = lower + rng.random(dim) * span
        v = evaluate(x)
        if v < best_v:
            best_x, best_v = x.copy(), v

        step = 0.25 * span.copy()
        start_budget = min(budget, evals + per_start)
        while evals < start_budget and np.max(step / span) > 1e-12:
            improved = False
            for d in range(dim):
                for sign in (+1.0, -1.0):
                    if evals >= start_budget:
                        break
                    trial = x.copy()
                    trial[d] = np.clip(trial[d] + sign * step[d], lower[d], upper[d])
                    tv = evaluate(trial)
                    if tv < v:
                        x, v = trial, tv
                        improved = True
                        break
            if v < best_v:
                best_x, best_v = x.copy(), v
            if not improved:
                step *= 0.5
    return best_x, best_v
