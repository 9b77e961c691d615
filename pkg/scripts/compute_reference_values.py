#!/usr/bin/env python3
"""Regenerate the committed benchmark reference values.

Runs the multi-start coordinate pattern search from
``deltaevolve.evaluators.reference`` on every default benchmark case and
writes the results to ``src/deltaevolve/evaluators/bbob_references.py``.
Reference values are frozen fixtures: evaluation never recomputes them, so
rerun this script only when the case list or the reference optimizer changes.

Usage:
    python scripts/compute_reference_values.py [--budget 20000] [--seed 0]
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from deltaevolve.evaluators import bbob
from deltaevolve.evaluators.reference import coordinate_pattern_search

OUTPUT = (
    pathlib.Path(__file__).resolve().parents[1]
    / "src"
    / "deltaevolve"
    / "evaluators"
    / "bbob_references.py"
)

HEADER = '''"""Committed reference objective values for the benchmark cases.

Generated by scripts/compute_reference_values.py (multi-start coordinate
pattern search, fixed seed). Do not edit by hand; rerun the script instead.
"""

REFERENCE_VALUES = {
'''


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--budget", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    lines = [HEADER]
    for function, dimension, instance in bbob.DEFAULT_CASES:
        case = bbob.BbobCase(function=function, dimension=dimension, instance=instance)
        lower = np.full(dimension, case.lower)
        upper = np.full(dimension, case.upper)
        _, value = coordinate_pattern_search(
            lambda x, c=case: bbob.bbob_value(c, x),
            lower,
            upper,
            budget=args.budget,
            seed=args.seed,
        )
        print(f"{case.case_id}: {value!r}")
        lines.append(f'    "{case.case_id}": {value!r},\n')
    lines.append("}\n")
    OUTPUT.write_text("".join(lines))
    print(f"wrote {OUTPUT}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
