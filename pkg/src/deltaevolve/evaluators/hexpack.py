"""Hexagon packing: geometry validation and density scoring.

A candidate layout places N unit regular hexagons (side 1) inside one outer
regular hexagon of side R, both using the vertex parameterization
``(x + side*cos(theta + k*pi/3), y + side*sin(theta + k*pi/3))`` for
k = 0..5. The outer hexagon is centered at the origin with theta = 0.

Validity is decided with the separating axis theorem for all pairs plus
half-plane containment checks for every inner vertex, all with a shared
numerical tolerance (touching within tolerance is allowed). Valid layouts
score ``rho = 1/R``, normalized against a reference density; invalid layouts
score 0. Wall time is recorded on the report as a secondary metric only.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .base import (
    KIND_DIRECT,
    KIND_ORACLE,
    EvaluationReport,
    TaskSpec,
    invalid_report,
)

DEFAULT_TOLERANCE = 1e-6
DEFAULT_RHO_REF = 0.2544
DEFAULT_HEX_COUNT = 11


class DegeneratePolygon(ValueError):
    pass


class MalformedLayout(ValueError):
    pass


@dataclass(frozen=True)
class HexLayout:
    """Outer hexagon side length plus (x, y, theta) placements of unit hexagons."""

    outer_side: float
    placements: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class PackingValidation:
    valid: bool
    rho: float
    violations: tuple[str, ...]


def hex_vertices(x: float, y: float, theta: float, side: float) -> np.ndarray:
    """Return the 6 vertices (counter-clockwise) of a regular hexagon.

    ``side`` is both the edge length and the circumradius.
    """
    if side <= 0:
        raise ValueError("side must be positive")
    angles = theta + np.arange(6) * (np.pi / 3.0)
    return np.column_stack((x + side * np.cos(angles), y + side * np.sin(angles)))


def _edge_normals(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < 1e-12):
        raise DegeneratePolygon("polygon has a zero-length edge")
    normals = np.column_stack((edges[:, 1], -edges[:, 0])) / lengths[:, None]
    return normals


def sat_disjoint(a: np.ndarray, b: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> bool:
    """True iff convex polygons a and b are disjoint up to the tolerance.

    Projects both polygons onto every edge normal of either polygon; they are
    disjoint when some axis separates the projections by more than -tol, so
    shapes touching within the tolerance still count as disjoint.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] < 3 or b.shape[0] < 3:
        raise DegeneratePolygon("polygons need at least 3 vertices")
    axes = np.vstack((_edge_normals(a), _edge_normals(b)))
    proj_a = a @ axes.T
    proj_b = b @ axes.T
    gaps = np.maximum(
        proj_b.min(axis=0) - proj_a.max(axis=0),
        proj_a.min(axis=0) - proj_b.max(axis=0),
    )
    return bool(gaps.max() > -tol)


def separation_margin(a: np.ndarray, b: np.ndarray) -> float:
    """Signed SAT gap: positive when separated, negative when overlapping."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axes = np.vstack((_edge_normals(a), _edge_normals(b)))
    proj_a = a @ axes.T
    proj_b = b @ axes.T
    gaps = np.maximum(
        proj_b.min(axis=0) - proj_a.max(axis=0),
        proj_a.min(axis=0) - proj_b.max(axis=0),
    )
    return float(gaps.max())


def points_in_convex(
    poly: np.ndarray, points: np.ndarray, tol: float = DEFAULT_TOLERANCE
) -> np.ndarray:
    """Half-plane containment test for a counter-clockwise convex polygon."""
    poly = np.asarray(poly, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < 1e-12):
        raise DegeneratePolygon("polygon has a zero-length edge")
    # signed distance of each point from each edge line (positive = inside)
    rel = points[:, None, :] - poly[None, :, :]
    cross = edges[None, :, 0] * rel[:, :, 1] - edges[None, :, 1] * rel[:, :, 0]
    signed = cross / lengths[None, :]
    return np.all(signed >= -tol, axis=1)


def validate_packing_geometry(
    outer: np.ndarray,
    inners: list[np.ndarray],
    tol: float = DEFAULT_TOLERANCE,
) -> tuple[bool, list[str]]:
    """Pairwise disjointness plus containment for explicit polygons."""
    violations: list[str] = []
    for i in range(len(inners)):
        for j in range(i + 1, len(inners)):
            if not sat_disjoint(inners[i], inners[j], tol):
                violations.append(f"overlap between hexagons {i} and {j}")
    for i, poly in enumerate(inners):
        inside = points_in_convex(outer, poly, tol)
        if not bool(np.all(inside)):
            k = int(np.argmin(inside))
            violations.append(f"hexagon {i} vertex {k} outside the outer boundary")
    return (not violations), violations


def validate_packing(
    layout: HexLayout, tol: float = DEFAULT_TOLERANCE
) -> PackingValidation:
    """Check a layout document and compute its density score base.

    Valid layouts yield rho = 1/R; invalid layouts yield rho = 0 with the
    offending pairs/indices listed.
    """
    if layout.outer_side <= 0:
        raise MalformedLayout("outer_side must be positive")
    outer = hex_vertices(0.0, 0.0, 0.0, layout.outer_side)
    inners = [hex_vertices(x, y, theta, 1.0) for x, y, theta in layout.placements]
    valid, violations = validate_packing_geometry(outer, inners, tol)
    rho = 1.0 / layout.outer_side if valid else 0.0
    return PackingValidation(valid=valid, rho=rho, violations=tuple(violations))


def parse_layout(text: str) -> HexLayout:
    """Parse the layout document: {"outer_side": R, "placements": [{x,y,theta}]}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedLayout(f"layout is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedLayout("layout document must be a JSON object")
    try:
        outer_side = float(doc["outer_side"])
        raw = doc["placements"]
        placements = tuple(
            (float(p["x"]), float(p["y"]), float(p["theta"])) for p in raw
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLayout(f"layout document is missing fields: {exc}") from exc
    for i, (x, y, theta) in enumerate(placements):
        if not all(math.isfinite(v) for v in (x, y, theta)):
            raise MalformedLayout(f"placement {i} has non-finite coordinates")
    if not math.isfinite(outer_side):
        raise MalformedLayout("outer_side is not finite")
    return HexLayout(outer_side=outer_side, placements=placements)


def layout_to_json(layout: HexLayout) -> str:
    doc = {
        "outer_side": layout.outer_side,
        "placements": [
            {"x": x, "y": y, "theta": theta} for x, y, theta in layout.placements
        ],
    }
    return json.dumps(doc, indent=2)


def _axial_spiral(count: int) -> list[tuple[int, int]]:
    """First ``count`` axial hex-grid coordinates, spiraling out from (0, 0)."""
    cells = [(0, 0)]
    directions = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))
    ring = 1
    while len(cells) < count:
        q, r = -ring, ring
        for dq, dr in directions:
            for _ in range(ring):
                cells.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    return cells[:count]


def baseline_lattice_layout(
    count: int = DEFAULT_HEX_COUNT, outer_side: float = 8.0, spacing: float = 1.002
) -> HexLayout:
    """Sparse honeycomb arrangement centered at the origin.

    Conservative by construction: neighbors sit ``spacing`` times the
    touching distance apart and the whole cluster stays far inside the outer
    boundary, so the layout is valid but far from dense.
    """
    # Flat-top honeycomb for theta = 0 hexagons with side 1: axial cell
    # (q, r) sits at x = 1.5 q, y = sqrt(3) (r + q / 2); neighbors are
    # exactly sqrt(3) apart (twice the inradius) before spacing is applied.
    placements = []
    for q, r in _axial_spiral(count):
        x = 1.5 * q * spacing
        y = math.sqrt(3.0) * (r + q / 2.0) * spacing
        placements.append((x, y, 0.0))
    return HexLayout(outer_side=outer_side, placements=tuple(placements))


def _layout_from_program(candidate: str, timeout: float) -> HexLayout:
    """Run a program candidate and parse the layout it prints on stdout."""
    with tempfile.TemporaryDirectory(prefix="hexpack-") as workdir:
        path = Path(workdir) / "candidate.py"
        path.write_text(candidate)
        try:
            proc = subprocess.run(
                [sys.executable, str(path)],
                capture_output=True,
                text=True,
                timeout=timeout,
                cwd=workdir,
            )
        except subprocess.TimeoutExpired as exc:
            raise MalformedLayout(f"candidate timed out after {timeout}s") from exc
    if proc.returncode != 0:
        raise MalformedLayout(
            f"candidate exited with status {proc.returncode}: {proc.stderr[:200]}"
        )
    return parse_layout(proc.stdout)


def evaluate_packing(task: TaskSpec, candidate: str) -> EvaluationReport:
    """Score a layout candidate as rho / rho_ref (0 when invalid)."""
    start = time.monotonic()
    rho_ref = float(task.param("rho_ref", DEFAULT_RHO_REF))
    tol = float(task.param("tolerance", DEFAULT_TOLERANCE))
    expected = int(task.param("hexagon_count", DEFAULT_HEX_COUNT))

    try:
        if task.kind == KIND_DIRECT:
            layout = parse_layout(candidate)
        elif task.kind == KIND_ORACLE:
            layout = _layout_from_program(candidate, task.timeout)
        else:
            raise ValueError(f"evaluate_packing cannot handle task kind {task.kind!r}")
        if len(layout.placements) != expected:
            raise MalformedLayout(
                f"expected {expected} placements, found {len(layout.placements)}"
            )
        result = validate_packing(layout, tol)
    except MalformedLayout as exc:
        return invalid_report(str(exc), wall_time=time.monotonic() - start)

    wall_time = time.monotonic() - start
    if not result.valid:
        shown = "; ".join(result.violations[:5])
        more = len(result.violations) - 5
        if more > 0:
            shown += f"; and {more} more"
        return invalid_report(f"invalid packing: {shown}", wall_time=wall_time)

    score = result.rho / rho_ref
    feedback = (
        f"valid packing: outer_side={layout.outer_side:.6f}, "
        f"rho={result.rho:.6f}, normalized={score:.6f}"
    )
    return EvaluationReport(
        combined_score=score,
        per_case={"hexagon_packing": score},
        valid=True,
        feedback=feedback,
        evals_used={},
        wall_time=wall_time,
    )
