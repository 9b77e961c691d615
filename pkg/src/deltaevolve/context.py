"""Context construction: pick inspiration nodes and render the prompts.

This is the half of every iteration that turns the evolution history into
the conditioning text for the next model call. Node selection draws the
parent, the top scorers, and the diversity picks from the database; rendering
then discloses each inspiration at a detail level chosen by recency —
strategy summaries for ancient nodes, full modification plans for recent
ones, full code only for the parent.

Four context policies are supported:

* ``DeltaEvolve`` — leveled delta inspirations plus the parent's code.
* ``FullCode``    — inspirations rendered as full programs with scores.
* ``BlindElite``  — same node selection as FullCode, but every numeric score
  is stripped from the rendered prompt.
* ``RandomContext`` — inspirations drawn uniformly at random, scores shown.

All functions are pure over a database snapshot plus a seeded stream, so a
fixed (snapshot, iteration, config, policy, seed) tuple yields byte-identical
prompts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import prompts
from .database import EvolutionDatabase, Node
from .delta_codec import render_delta
from .evaluators.base import TaskSpec

LEVEL_SUMMARY = 1
LEVEL_PLAN = 2
LEVEL_FULL_CODE = 3

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


class ContextPolicy(str, Enum):
    DELTA_EVOLVE = "DeltaEvolve"
    FULL_CODE = "FullCode"
    BLIND_ELITE = "BlindElite"
    RANDOM_CONTEXT = "RandomContext"


class QualitativeShift(str, Enum):
    IMPROVED = "Improved"
    DEGRADED = "Degraded"
    UNCHANGED = "Unchanged"


class NonFiniteScore(ValueError):
    pass


class EmptyDatabase(LookupError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Context-sampling knobs: elite count, diverse count, recency window."""

    k: int = 3
    m: int = 2
    w: int = 10
    shift_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if self.k < 0 or self.m < 0:
            raise ValueError("k and m must be nonnegative")
        if self.w < 1:
            raise ValueError("the recency window w must be >= 1")


@dataclass(frozen=True)
class InspirationEntry:
    node_id: str
    level: int  # LEVEL_SUMMARY, LEVEL_PLAN, or LEVEL_FULL_CODE
    role: str  # "top" | "diverse" | "random"
    body: str
    shift: QualitativeShift
    feedback: str
    score: float
    iteration: int


@dataclass(frozen=True)
class PromptContext:
    """Everything the prompt renderer needs for one iteration."""

    parent_id: str
    parent_code: str
    parent_feedback: str
    parent_score: float
    entries: tuple[InspirationEntry, ...]
    policy: ContextPolicy
    iteration: int


def qualitative_shift(
    child_score: float, parent_score: float, tolerance: float = 1e-9
) -> QualitativeShift:
    """Label a score change as Improved/Degraded/Unchanged within a tolerance."""
    if not (math.isfinite(child_score) and math.isfinite(parent_score)):
        raise NonFiniteScore("scores must be finite to compare")
    if child_score - parent_score > tolerance:
        return QualitativeShift.IMPROVED
    if parent_score - child_score > tolerance:
        return QualitativeShift.DEGRADED
    return QualitativeShift.UNCHANGED


def mask_numbers(text: str) -> str:
    """Replace every numeric token; used to blind prompts to score values."""
    return _NUMBER_RE.sub("[masked]", text)


def _node_shift(db: EvolutionDatabase, node: Node, tolerance: float) -> QualitativeShift:
    if node.parent_id is None or node.parent_id not in db:
        return QualitativeShift.UNCHANGED
    return qualitative_shift(
        node.combined_score, db.get(node.parent_id).combined_score, tolerance
    )


def _delta_body(node: Node, level: int, shift: QualitativeShift) -> str:
    header = f"[iter: {node.iteration:03d} | {shift.value.lower()}]"
    if node.summary is None or node.plan is None:
        return f"{header}\nBaseline program (no recorded strategy change)."
    return f"{header}\n{render_delta(node.summary, node.plan, level)}"


def _uniform_sample(
    rng: np.random.Generator, candidates: list[str], count: int
) -> list[str]:
    """Sequential uniform draws without replacement (score-blind)."""
    remaining = list(candidates)
    picks: list[str] = []
    while remaining and len(picks) < count:
        picks.append(remaining.pop(int(rng.integers(len(remaining)))))
    return picks


def build_context(
    db: EvolutionDatabase,
    t: int,
    cfg: SamplerConfig,
    policy: ContextPolicy,
    rng: np.random.Generator,
    island: int = 0,
) -> PromptContext:
    """Assemble the prompt context for iteration ``t``.

    Node selection: the parent comes from the island's selection policy; the
    score-aware policies add the k best nodes plus m maximally-distant grid
    elites, while RandomContext replaces both sets with k+m uniform draws.
    Rendering: DeltaEvolve discloses each inspiration at level 2 when its
    iteration is inside the recency window (iteration > t - w) and level 1
    otherwise; every other policy discloses inspirations as full code. The
    parent is the only node ever rendered at full-code level under
    DeltaEvolve, and never appears among the inspirations.
    """
    if len(db) == 0:
        raise EmptyDatabase("cannot build a context from an empty database")
    parent = db.select_parent(rng, island)

    selections: list[tuple[Node, str]] = []
    if policy is ContextPolicy.RANDOM_CONTEXT:
        candidates = sorted(n.id for n in db.all_nodes() if n.id != parent.id)
        for node_id in _uniform_sample(rng, candidates, cfg.k + cfg.m):
            selections.append((db.get(node_id), "random"))
    else:
        # Fetch one extra so the parent can be dropped without shrinking k,
        # and over-fetch diverse cells so elites already chosen as top picks
        # can be skipped without shrinking m.
        elites = [n for n in db.top_k(cfg.k + 1) if n.id != parent.id][: cfg.k]
        seen = {n.id for n in elites}
        for node in elites:
            selections.append((node, "top"))
        diverse_taken = 0
        for node in db.sample_diverse(cfg.m + cfg.k + 1, parent, rng):
            if node.id in seen or diverse_taken >= cfg.m:
                continue
            seen.add(node.id)
            selections.append((node, "diverse"))
            diverse_taken += 1

    entries: list[InspirationEntry] = []
    for node, role in selections:
        shift = _node_shift(db, node, cfg.shift_tolerance)
        if policy is ContextPolicy.DELTA_EVOLVE:
            level = LEVEL_PLAN if node.iteration > t - cfg.w else LEVEL_SUMMARY
            body = _delta_body(node, level, shift)
        else:
            level = LEVEL_FULL_CODE
            body = node.code
        entries.append(
            InspirationEntry(
                node_id=node.id,
                level=level,
                role=role,
                body=body,
                shift=shift,
                feedback=node.report.feedback,
                score=node.combined_score,
                iteration=node.iteration,
            )
        )

    return PromptContext(
        parent_id=parent.id,
        parent_code=parent.code,
        parent_feedback=parent.report.feedback,
        parent_score=parent.combined_score,
        entries=tuple(entries),
        policy=policy,
        iteration=t,
    )


def _entry_heading(policy: ContextPolicy, role: str, index: int) -> str:
    if policy is ContextPolicy.DELTA_EVOLVE:
        template = (
            prompts.TOP_DELTA_HEADING if role == "top" else prompts.DIVERSE_DELTA_HEADING
        )
    elif policy is ContextPolicy.RANDOM_CONTEXT:
        template = prompts.RANDOM_PROGRAM_HEADING
    else:
        template = (
            prompts.TOP_PROGRAM_HEADING if role == "top" else prompts.DIVERSE_PROGRAM_HEADING
        )
    return template.format(index=index)


def render_prompts(task: TaskSpec, ctx: PromptContext) -> tuple[str, str]:
    """Render the (system, user) prompt pair for one model call."""
    problem = str(task.param("description", task.name))
    system_prompt = prompts.render_system_prompt(problem)

    blind = ctx.policy is ContextPolicy.BLIND_ELITE

    def scrub(text: str) -> str:
        return mask_numbers(text) if blind else text

    focus = str(task.param("focus_areas", "overall objective score"))
    sections = [
        prompts.CURRENT_PROGRAM_HEADER,
        "",
        f"- Focus areas: {focus}",
        "",
        f"- Feedback: {scrub(ctx.parent_feedback)}",
        "",
    ]

    if ctx.policy is ContextPolicy.DELTA_EVOLVE:
        sections += [prompts.DELTA_INSPIRATIONS_HEADER, "", prompts.DELTA_INSPIRATIONS_INTRO, ""]
    else:
        sections += [
            prompts.FULLCODE_INSPIRATIONS_HEADER,
            "",
            prompts.FULLCODE_INSPIRATIONS_INTRO,
            "",
        ]

    counters = {"top": 0, "diverse": 0, "random": 0}
    for entry in ctx.entries:
        counters[entry.role] += 1
        sections.append(_entry_heading(ctx.policy, entry.role, counters[entry.role]))
        sections.append("")
        if entry.level == LEVEL_FULL_CODE:
            if not blind:
                sections.append(f"Score: {entry.score:.6f}")
            sections.append(entry.body)
        else:
            sections.append(entry.body)
        sections.append("")
        sections.append(f"- Feedback: {scrub(entry.feedback)}")
        sections.append("")

    sections += [
        prompts.PARENT_PROGRAM_HEADER,
        "",
        ctx.parent_code,
        "",
        prompts.DIFF_INSTRUCTIONS,
        "",
    ]
    return system_prompt, "\n".join(sections)
