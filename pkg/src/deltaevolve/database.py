"""Multi-level evolution store: islands, a MAP-Elites grid, and an archive.

Every evolved program is kept as a :class:`Node` bundling the program text
with its strategy summary, modification plan, evaluation report, and lineage.
Nodes are grouped into ring-connected islands whose memberships are bounded;
a behavior-descriptor grid keeps the best node per cell for diversity
sampling, and a global archive keeps the overall top scorers.

Single-writer model: all mutations go through one coordinator; read-only
queries may be served between mutations.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .delta_codec import DeltaModification, DeltaPlan, DeltaSummary
from .evaluators.base import EvaluationReport

SCHEMA_VERSION = 1

SCORE_FLOOR = 1e-6  # keeps zero-score nodes selectable under weighted draws

OUTCOME_NEW_CELL = "new-cell"
OUTCOME_REPLACED_ELITE = "replaced-elite"
OUTCOME_DOMINATED = "dominated"


class DatabaseError(Exception):
    pass


class DuplicateId(DatabaseError):
    pass


class EmptyPopulation(DatabaseError):
    pass


class IoFailure(DatabaseError):
    pass


class SchemaVersionMismatch(DatabaseError):
    pass


class CorruptCheckpoint(DatabaseError):
    pass


@dataclass(frozen=True)
class DescriptorVector:
    """Behavior coordinates in [0, 1]^2: normalized length and a textual
    diversity coordinate, both deterministic functions of the code text."""

    complexity: float
    diversity: float


@dataclass(frozen=True)
class TokenCount:
    prompt: int = 0
    completion: int = 0


@dataclass(frozen=True)
class Node:
    """One entry of the evolution tree."""

    id: str
    parent_id: str | None
    island: int
    iteration: int
    code: str
    summary: DeltaSummary | None
    plan: DeltaPlan | None
    report: EvaluationReport
    descriptor: DescriptorVector
    tokens: TokenCount = TokenCount()

    @property
    def combined_score(self) -> float:
        return self.report.combined_score


@dataclass(frozen=True)
class SelectionConfig:
    """Probabilities of the three parent-selection branches."""

    exploitation_ratio: float = 0.7
    exploration_ratio: float = 0.2
    elite_ratio: float = 0.1

    def __post_init__(self) -> None:
        ratios = (self.exploitation_ratio, self.exploration_ratio, self.elite_ratio)
        if any(r < 0 for r in ratios):
            raise ValueError("selection ratios must be nonnegative")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"selection ratios must sum to 1, got {sum(ratios)}")


@dataclass
class MigrationReport:
    iteration: int
    performed: bool
    moved: list[tuple[str, int, int]] = field(default_factory=list)  # (id, src, dst)


def compute_descriptor(code: str, max_code_length: int = 10_000) -> DescriptorVector:
    """Deterministic behavior descriptor of a program text.

    Complexity is code length normalized by ``max_code_length`` and clamped
    to 1. Diversity hashes the character-trigram multiset onto [0, 1) with a
    keyed digest, so it is stable across runs, processes, and platforms.
    """
    complexity = min(1.0, len(code) / max_code_length)
    trigrams = Counter(code[i : i + 3] for i in range(max(0, len(code) - 2)))
    payload = "\x1f".join(f"{gram}\x1e{count}" for gram, count in sorted(trigrams.items()))
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    diversity = int.from_bytes(digest, "big") / 2.0**64
    return DescriptorVector(complexity=complexity, diversity=diversity)


def _rank_key(node: Node) -> tuple[float, int, str]:
    # Best-first everywhere: score descending, then earlier iteration,
    # then lexicographically smaller id.
    return (-node.combined_score, node.iteration, node.id)


class EvolutionDatabase:
    """Single-writer store of all evolved nodes."""

    def __init__(
        self,
        population_size: int = 40,
        archive_size: int = 20,
        islands: int = 3,
        migration_interval: int = 10,
        migration_rate: float = 0.1,
        selection: SelectionConfig | None = None,
        grid_bins: int = 10,
        max_code_length: int = 10_000,
    ) -> None:
        if population_size < 1 or archive_size < 1 or islands < 1:
            raise ValueError("population, archive, and island counts must be >= 1")
        if migration_interval < 1 or not 0.0 <= migration_rate <= 1.0:
            raise ValueError("bad migration parameters")
        self.population_size = population_size
        self.archive_size = archive_size
        self.islands = islands
        self.migration_interval = migration_interval
        self.migration_rate = migration_rate
        self.selection = selection or SelectionConfig()
        self.grid_bins = grid_bins
        self.max_code_length = max_code_length

        self._nodes: dict[str, Node] = {}
        self._island_members: list[list[str]] = [[] for _ in range(islands)]
        self._grid: dict[tuple[int, int], str] = {}
        self._archive: list[str] = []
        self.meta: dict = {}

    # -- basic queries ----------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def get(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def all_nodes(self) -> list[Node]:
        return list(self._nodes.values())

    def island_population(self, island: int) -> list[Node]:
        return [self._nodes[i] for i in self._island_members[island]]

    def archive_nodes(self) -> list[Node]:
        return [self._nodes[i] for i in self._archive]

    def occupied_cells(self) -> dict[tuple[int, int], Node]:
        return {cell: self._nodes[i] for cell, i in self._grid.items()}

    def best(self) -> Node | None:
        nodes = self.all_nodes()
        if not nodes:
            return None
        return min(nodes, key=_rank_key)

    def descriptor(self, code: str) -> DescriptorVector:
        return compute_descriptor(code, self.max_code_length)

    def cell_of(self, descriptor: DescriptorVector) -> tuple[int, int]:
        def bin_index(v: float) -> int:
            return min(self.grid_bins - 1, max(0, int(v * self.grid_bins)))

        return (bin_index(descriptor.complexity), bin_index(descriptor.diversity))

    @staticmethod
    def cell_center(cell: tuple[int, int], bins: int) -> tuple[float, float]:
        return ((cell[0] + 0.5) / bins, (cell[1] + 0.5) / bins)

    # -- mutations ---------------------------------------------------------

    def _validate_node(self, node: Node) -> None:
        if node.id in self._nodes:
            raise DuplicateId(f"node id {node.id!r} already stored")
        if not 0 <= node.island < self.islands:
            raise ValueError(f"island {node.island} out of range")
        has_delta = node.summary is not None and node.plan is not None
        if node.parent_id is None:
            if has_delta or node.summary is not None or node.plan is not None:
                raise ValueError("seed nodes must not carry deltas")
        else:
            if not has_delta:
                raise ValueError("non-seed nodes must carry both summary and plan")
            if node.parent_id not in self._nodes:
                raise ValueError(f"unknown parent id {node.parent_id!r}")
            parent = self._nodes[node.parent_id]
            if node.iteration <= parent.iteration:
                raise ValueError(
                    f"iteration {node.iteration} must exceed the parent's "
                    f"{parent.iteration}"
                )
        if node.report.valid and not math.isfinite(node.report.combined_score):
            raise ValueError("valid reports must carry a finite combined score")

    def _evict_overflow(self, island: int) -> None:
        members = self._island_members[island]
        while len(members) > self.population_size:
            elite_ids = set(self._grid.values())
            candidates = [i for i in members if i not in elite_ids] or list(members)
            # Evict the weakest: lowest score, then latest iteration, then
            # largest id. Eviction only drops island membership; the node
            # stays in the store (lineage, grid, and archive keep working).
            victim = max(candidates, key=lambda i: _rank_key(self._nodes[i]))
            members.remove(victim)

    def _update_archive(self, node_id: str) -> None:
        pool = set(self._archive)
        pool.add(node_id)
        ranked = sorted(pool, key=lambda i: _rank_key(self._nodes[i]))
        self._archive = ranked[: self.archive_size]

    def insert(self, node: Node) -> str:
        """Store a node; returns the grid placement outcome."""
        self._validate_node(node)
        self._nodes[node.id] = node
        self._island_members[node.island].append(node.id)
        self._evict_overflow(node.island)

        cell = self.cell_of(node.descriptor)
        incumbent_id = self._grid.get(cell)
        if incumbent_id is None:
            self._grid[cell] = node.id
            outcome = OUTCOME_NEW_CELL
        elif node.combined_score > self._nodes[incumbent_id].combined_score:
            self._grid[cell] = node.id
            outcome = OUTCOME_REPLACED_ELITE
        else:
            outcome = OUTCOME_DOMINATED

        self._update_archive(node.id)
        return outcome

    def adopt(self, node_id: str, island: int) -> None:
        """Add an existing node to another island's population.

        Used to give every island the same starting baseline; the node record
        itself is not copied.
        """
        if node_id not in self._nodes:
            raise KeyError(f"unknown node id {node_id!r}")
        if not 0 <= island < self.islands:
            raise ValueError(f"island {island} out of range")
        members = self._island_members[island]
        if node_id not in members:
            members.append(node_id)
            self._evict_overflow(island)

    def select_parent(self, rng: np.random.Generator, island: int) -> Node:
        """Draw the next parent from one island.

        Three branches: exploitation samples the island weighted by
        max(score, floor), exploration samples the island uniformly, and the
        elite branch samples the archive uniformly (falling back to
        exploitation while the archive is still empty).
        """
        members = self._island_members[island]
        if not members:
            raise EmptyPopulation(f"island {island} has no members")
        draw = rng.random()
        sel = self.selection
        branch = "exploitation"
        if draw < sel.exploitation_ratio:
            branch = "exploitation"
        elif draw < sel.exploitation_ratio + sel.exploration_ratio:
            branch = "exploration"
        else:
            branch = "elite" if self._archive else "exploitation"

        if branch == "exploration":
            return self._nodes[members[int(rng.integers(len(members)))]]
        if branch == "elite":
            return self._nodes[self._archive[int(rng.integers(len(self._archive)))]]
        weights = np.array(
            [max(self._nodes[i].combined_score, SCORE_FLOOR) for i in members]
        )
        probabilities = weights / weights.sum()
        index = int(rng.choice(len(members), p=probabilities))
        return self._nodes[members[index]]

    def top_k(self, k: int) -> list[Node]:
        """The k best nodes across all islands, best first."""
        ranked = sorted(self.all_nodes(), key=_rank_key)
        return ranked[: max(0, k)]

    def sample_diverse(
        self, m: int, parent: Node, rng: np.random.Generator
    ) -> list[Node]:
        """Elites of the occupied cells farthest from the parent's cell.

        Distance is Euclidean between cell centers; ties are broken by the
        seeded stream. The parent itself is never returned.
        """
        if m <= 0 or not self._grid:
            return []
        parent_cell = self.cell_of(parent.descriptor)
        px, py = self.cell_center(parent_cell, self.grid_bins)
        ordered = []
        for cell in sorted(self._grid):
            cx, cy = self.cell_center(cell, self.grid_bins)
            distance = math.hypot(cx - px, cy - py)
            ordered.append((-distance, rng.random(), cell))
        ordered.sort()
        picks: list[Node] = []
        for _, _, cell in ordered:
            elite = self._nodes[self._grid[cell]]
            if elite.id == parent.id:
                continue
            picks.append(elite)
            if len(picks) == m:
                break
        return picks

    def migrate(self, iteration: int) -> MigrationReport:
        """Every ``migration_interval`` iterations, copy each island's best
        ceil(rate * population) members into the next island on the ring."""
        if iteration % self.migration_interval != 0:
            return MigrationReport(iteration=iteration, performed=False)
        report = MigrationReport(iteration=iteration, performed=True)
        snapshot = [list(members) for members in self._island_members]
        for source in range(self.islands):
            members = snapshot[source]
            if not members:
                continue
            count = math.ceil(self.migration_rate * len(members))
            ranked = sorted(members, key=lambda i: _rank_key(self._nodes[i]))
            destination = (source + 1) % self.islands
            for node_id in ranked[:count]:
                if node_id in self._island_members[destination]:
                    continue
                self._island_members[destination].append(node_id)
                report.moved.append((node_id, source, destination))
            self._evict_overflow(destination)
        return report

    # -- persistence -------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "population_size": self.population_size,
            "archive_size": self.archive_size,
            "islands": self.islands,
            "migration_interval": self.migration_interval,
            "migration_rate": self.migration_rate,
            "selection": {
                "exploitation_ratio": self.selection.exploitation_ratio,
                "exploration_ratio": self.selection.exploration_ratio,
                "elite_ratio": self.selection.elite_ratio,
            },
            "grid_bins": self.grid_bins,
            "max_code_length": self.max_code_length,
            "nodes": [node_to_dict(n) for n in self._nodes.values()],
            "island_members": [list(m) for m in self._island_members],
            "grid": {f"{cx},{cy}": i for (cx, cy), i in self._grid.items()},
            "archive": list(self._archive),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "EvolutionDatabase":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"checkpoint schema {version!r} != supported {SCHEMA_VERSION}"
            )
        try:
            db = cls(
                population_size=doc["population_size"],
                archive_size=doc["archive_size"],
                islands=doc["islands"],
                migration_interval=doc["migration_interval"],
                migration_rate=doc["migration_rate"],
                selection=SelectionConfig(**doc["selection"]),
                grid_bins=doc["grid_bins"],
                max_code_length=doc["max_code_length"],
            )
            for raw in doc["nodes"]:
                node = node_from_dict(raw)
                db._nodes[node.id] = node
            db._island_members = [list(m) for m in doc["island_members"]]
            if len(db._island_members) != db.islands:
                raise ValueError("island membership count mismatch")
            db._grid = {}
            for key, node_id in doc["grid"].items():
                cx, cy = key.split(",")
                db._grid[(int(cx), int(cy))] = node_id
            db._archive = list(doc["archive"])
            db.meta = dict(doc.get("meta", {}))
            for referenced in db._archive + list(db._grid.values()):
                if referenced not in db._nodes:
                    raise ValueError(f"dangling node reference {referenced!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"unusable checkpoint document: {exc}") from exc
        return db

    def save(self, path: str | Path) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_document(), sort_keys=True))
        except OSError as exc:
            raise IoFailure(f"could not write checkpoint {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "EvolutionDatabase":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise IoFailure(f"could not read checkpoint {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptCheckpoint(f"checkpoint is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise CorruptCheckpoint("checkpoint must be a JSON object")
        return cls.from_document(doc)


# -- node (de)serialization ------------------------------------------------


def node_to_dict(node: Node) -> dict:
    return {
        "id": node.id,
        "parent_id": node.parent_id,
        "island": node.island,
        "iteration": node.iteration,
        "code": node.code,
        "summary": (
            None
            if node.summary is None
            else {
                "from_strategy": node.summary.from_strategy,
                "to_strategy": node.summary.to_strategy,
            }
        ),
        "plan": (
            None
            if node.plan is None
            else {
                "modifications": [
                    {
                        "component": m.component,
                        "old_logic": m.old_logic,
                        "new_logic": m.new_logic,
                        "hypothesis": m.hypothesis,
                    }
                    for m in node.plan.modifications
                ]
            }
        ),
        "report": {
            "combined_score": node.report.combined_score,
            "per_case": dict(node.report.per_case),
            "valid": node.report.valid,
            "feedback": node.report.feedback,
            "evals_used": dict(node.report.evals_used),
            "wall_time": node.report.wall_time,
        },
        "descriptor": {
            "complexity": node.descriptor.complexity,
            "diversity": node.descriptor.diversity,
        },
        "tokens": {"prompt": node.tokens.prompt, "completion": node.tokens.completion},
    }


def node_from_dict(raw: dict) -> Node:
    summary = raw["summary"]
    plan = raw["plan"]
    return Node(
        id=raw["id"],
        parent_id=raw["parent_id"],
        island=raw["island"],
        iteration=raw["iteration"],
        code=raw["code"],
        summary=None if summary is None else DeltaSummary(**summary),
        plan=(
            None
            if plan is None
            else DeltaPlan(
                modifications=tuple(
                    DeltaModification(**m) for m in plan["modifications"]
                )
            )
        ),
        report=EvaluationReport(
            combined_score=raw["report"]["combined_score"],
            per_case=raw["report"]["per_case"],
            valid=raw["report"]["valid"],
            feedback=raw["report"]["feedback"],
            evals_used=raw["report"]["evals_used"],
            wall_time=raw["report"]["wall_time"],
        ),
        descriptor=DescriptorVector(**raw["descriptor"]),
        tokens=TokenCount(**raw["tokens"]),
    )
