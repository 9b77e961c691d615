"""The evolution loop: select, build context, generate, patch, evaluate, insert.

One iteration alternates the two halves of the search. The context half
rebuilds the conditioning text from the history under the configured policy;
the generation half samples candidate programs from the model, patches the
parent, evaluates the result, and stores it. Candidate failures of any kind
(generation, parsing, patching, validation) are absorbed into the metrics
stream and never abort the run.

Reproducibility contract: every random draw is derived from
(run seed, iteration[, candidate index]) via named substreams, candidate
results are committed in candidate-index order regardless of completion
order, and offline providers expose ``skip`` so a resumed run replays the
exact byte stream of an uninterrupted one.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import delta_codec
from .context import (
    ContextPolicy,
    SamplerConfig,
    build_context,
    render_prompts,
)
from .database import (
    EvolutionDatabase,
    Node,
    SelectionConfig,
    TokenCount,
    DatabaseError,
)
from .evaluators import TaskSpec, evaluate
from .gateway import (
    Completion,
    ModelSpec,
    RetriesExhausted,
    TokenLedger,
    choose_model,
    failure_completion,
    generate,
)
from .providers import Provider, ProviderError
from .tasks import builtin_task, seed_candidate

CHECKPOINT_SCHEMA_VERSION = 1
METRICS_FILENAME = "metrics.jsonl"
PROMPTS_FILENAME = "prompts.jsonl"
CHECKPOINT_FILENAME = "checkpoint.json"
SUMMARY_FILENAME = "summary.json"

OUTCOME_SEED = "seed"
OUTCOME_INSERTED = "inserted"


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class MissingMetrics(FileNotFoundError):
    pass


@dataclass(frozen=True)
class HttpProviderConfig:
    endpoint: str = ""
    auth_env: str = ""
    auth_header: str = "Authorization"


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    policy: ContextPolicy = ContextPolicy.DELTA_EVOLVE
    sampler: SamplerConfig = SamplerConfig()
    selection: SelectionConfig = SelectionConfig()
    ensemble: tuple[ModelSpec, ...] = (ModelSpec(name="offline", weight=1.0),)
    max_iterations: int = 100
    seed: int = 42
    population_size: int = 40
    archive_size: int = 20
    islands: int = 3
    migration_interval: int = 10
    migration_rate: float = 0.1
    parallel_evaluations: int = 4
    candidates_per_iteration: int = 1
    max_retries: int = 3
    checkpoint_interval: int = 10
    http: HttpProviderConfig = HttpProviderConfig()
    # Reserved, currently unimplemented knob; accepted but ignored.
    cascade_evaluation: bool = False

    def new_database(self) -> EvolutionDatabase:
        return EvolutionDatabase(
            population_size=self.population_size,
            archive_size=self.archive_size,
            islands=self.islands,
            migration_interval=self.migration_interval,
            migration_rate=self.migration_rate,
            selection=self.selection,
        )


_CONFIG_KEYS = {
    "task",
    "policy",
    "sampler",
    "selection",
    "ensemble",
    "max_iterations",
    "seed",
    "population_size",
    "archive_size",
    "islands",
    "migration_interval",
    "migration_rate",
    "parallel_evaluations",
    "candidates_per_iteration",
    "max_retries",
    "checkpoint_interval",
    "http",
    "cascade_evaluation",
}


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from parsed configuration data.

    Unknown keys are rejected rather than ignored so typos cannot silently
    change a run.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        task_raw = raw.get("task", "hexagon")
        if isinstance(task_raw, str):
            task = builtin_task(task_raw)
        else:
            task = TaskSpec(
                name=task_raw["name"],
                kind=task_raw["kind"],
                parameters=task_raw.get("parameters", {}),
                timeout=task_raw.get("timeout", 300.0),
            )
        policy = ContextPolicy(raw.get("policy", "DeltaEvolve"))
        sampler = SamplerConfig(**raw.get("sampler", {}))
        selection = SelectionConfig(**raw.get("selection", {}))
        ensemble_raw = raw.get("ensemble", [{"name": "offline", "weight": 1.0}])
        ensemble = tuple(ModelSpec(**spec) for spec in ensemble_raw)
        http = HttpProviderConfig(**raw.get("http", {}))
        config = RunConfig(
            task=task,
            policy=policy,
            sampler=sampler,
            selection=selection,
            ensemble=ensemble,
            max_iterations=int(raw.get("max_iterations", 100)),
            seed=int(raw.get("seed", 42)),
            population_size=int(raw.get("population_size", 40)),
            archive_size=int(raw.get("archive_size", 20)),
            islands=int(raw.get("islands", 3)),
            migration_interval=int(raw.get("migration_interval", 10)),
            migration_rate=float(raw.get("migration_rate", 0.1)),
            parallel_evaluations=int(raw.get("parallel_evaluations", 4)),
            candidates_per_iteration=int(raw.get("candidates_per_iteration", 1)),
            max_retries=int(raw.get("max_retries", 3)),
            checkpoint_interval=int(raw.get("checkpoint_interval", 10)),
            http=http,
            cascade_evaluation=bool(raw.get("cascade_evaluation", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad configuration: {exc}") from exc
    if config.max_iterations < 0 or config.candidates_per_iteration < 1:
        raise ConfigError("max_iterations must be >= 0 and candidates_per_iteration >= 1")
    weight_total = sum(spec.weight for spec in config.ensemble)
    if not config.ensemble or abs(weight_total - 1.0) > 1e-9:
        raise ConfigError(
            f"ensemble weights must sum to 1, got {weight_total} "
            f"across {len(config.ensemble)} models"
        )
    if "parallel_evaluations" not in config.task.parameters:
        # Multi-case evaluators honor the run-level parallelism setting.
        merged = dict(config.task.parameters)
        merged["parallel_evaluations"] = config.parallel_evaluations
        config = replace(config, task=replace(config.task, parameters=merged))
    return config


def config_to_dict(config: RunConfig) -> dict:
    return {
        "task": {
            "name": config.task.name,
            "kind": config.task.kind,
            "parameters": dict(config.task.parameters),
            "timeout": config.task.timeout,
        },
        "policy": config.policy.value,
        "sampler": {
            "k": config.sampler.k,
            "m": config.sampler.m,
            "w": config.sampler.w,
            "shift_tolerance": config.sampler.shift_tolerance,
        },
        "selection": {
            "exploitation_ratio": config.selection.exploitation_ratio,
            "exploration_ratio": config.selection.exploration_ratio,
            "elite_ratio": config.selection.elite_ratio,
        },
        "ensemble": [
            {
                "name": s.name,
                "weight": s.weight,
                "temperature": s.temperature,
                "top_p": s.top_p,
                "max_tokens": s.max_tokens,
                "timeout": s.timeout,
            }
            for s in config.ensemble
        ],
        "max_iterations": config.max_iterations,
        "seed": config.seed,
        "population_size": config.population_size,
        "archive_size": config.archive_size,
        "islands": config.islands,
        "migration_interval": config.migration_interval,
        "migration_rate": config.migration_rate,
        "parallel_evaluations": config.parallel_evaluations,
        "candidates_per_iteration": config.candidates_per_iteration,
        "max_retries": config.max_retries,
        "checkpoint_interval": config.checkpoint_interval,
        "http": {
            "endpoint": config.http.endpoint,
            "auth_env": config.http.auth_env,
            "auth_header": config.http.auth_header,
        },
        "cascade_evaluation": config.cascade_evaluation,
    }


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


@dataclass
class IterationRecord:
    """One attempted candidate, successful or not."""

    iteration: int
    candidate_index: int
    parent_id: str | None
    policy: str
    child_id: str | None
    rejection: str | None
    child_score: float | None
    best_score: float
    cumulative_prompt_tokens: int
    cumulative_completion_tokens: int
    cumulative_tokens: int
    outcome: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class RunState:
    config: RunConfig
    db: EvolutionDatabase
    ledger: TokenLedger
    iteration: int = 0
    best_id: str | None = None
    best_score: float = float("-inf")
    node_counter: int = 0
    provider_calls: int = 0
    rng_scheme: str = "substreams derived from (seed, iteration, candidate)"

    def next_node_id(self) -> str:
        node_id = f"n{self.node_counter:05d}"
        self.node_counter += 1
        return node_id


@dataclass(frozen=True)
class RunSummary:
    best_score: float
    best_node_id: str | None
    prompt_tokens: int
    completion_tokens: int
    total_tokens: int
    wall_time: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "best_score": self.best_score,
            "best_node_id": self.best_node_id,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "wall_time": self.wall_time,
            "iterations": self.iterations,
        }


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Named RNG substream; identical paths always yield identical streams."""
    encoded = [seed] + [
        int.from_bytes(p.encode(), "big") if isinstance(p, str) else int(p)
        for p in path
    ]
    return np.random.default_rng(np.random.SeedSequence(encoded))


class _RunLog:
    """Append-only JSONL writers for the metrics and prompt streams."""

    def __init__(self, run_dir: Path, append: bool = False) -> None:
        run_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        self._metrics = open(run_dir / METRICS_FILENAME, mode, encoding="utf-8")
        self._prompts = open(run_dir / PROMPTS_FILENAME, mode, encoding="utf-8")

    def metrics(self, record: IterationRecord) -> None:
        self._metrics.write(record.to_json() + "\n")
        self._metrics.flush()

    def prompt(self, payload: dict) -> None:
        self._prompts.write(json.dumps(payload, sort_keys=True) + "\n")
        self._prompts.flush()

    def close(self) -> None:
        self._metrics.close()
        self._prompts.close()


def initialize_state(config: RunConfig, log: _RunLog | None = None) -> RunState:
    """Evaluate the task's baseline candidate and seed the database with it."""
    db = config.new_database()
    ledger = TokenLedger()
    state = RunState(config=config, db=db, ledger=ledger)

    seed_code = seed_candidate(config.task)
    report = evaluate(config.task, seed_code)
    node = Node(
        id=state.next_node_id(),
        parent_id=None,
        island=0,
        iteration=0,
        code=seed_code,
        summary=None,
        plan=None,
        report=report,
        descriptor=db.descriptor(seed_code),
        tokens=TokenCount(),
    )
    db.insert(node)
    for island in range(1, config.islands):
        db.adopt(node.id, island)
    state.best_id = node.id
    state.best_score = report.combined_score if report.valid else 0.0
    if log is not None:
        totals = ledger.total()
        log.metrics(
            IterationRecord(
                iteration=0,
                candidate_index=0,
                parent_id=None,
                policy=config.policy.value,
                child_id=node.id,
                rejection=None,
                child_score=report.combined_score,
                best_score=state.best_score,
                cumulative_prompt_tokens=totals.prompt,
                cumulative_completion_tokens=totals.completion,
                cumulative_tokens=totals.combined,
                outcome=OUTCOME_SEED,
            )
        )
    return state


@dataclass
class _CandidateResult:
    index: int
    completion: Completion | None
    failure: str | None  # rejection label when no completion/mutation landed
    code: str | None = None
    parsed: delta_codec.ParsedResponse | None = None


def _produce_candidate(
    config: RunConfig,
    provider: Provider,
    system: str,
    user: str,
    parent_code: str,
    t: int,
    index: int,
    sleep: Callable[[float], None],
) -> _CandidateResult:
    """Generation + parsing + patching + validation for one candidate."""
    rng = substream(config.seed, t, index)
    spec = choose_model(config.ensemble, rng)
    try:
        completion = generate(
            provider, system, user, spec, max_retries=config.max_retries, sleep=sleep
        )
    except (ProviderError, RetriesExhausted) as exc:
        return _CandidateResult(
            index=index,
            completion=failure_completion(system, user, spec),
            failure=f"generation:{type(exc).__name__}",
        )
    try:
        parsed = delta_codec.parse_response(completion.text)
    except delta_codec.ResponseFormatError as exc:
        return _CandidateResult(
            index=index,
            completion=completion,
            failure=f"parse:{type(exc).__name__}",
        )
    violations = delta_codec.validate_delta(parsed.summary, parsed.plan)
    if violations:
        kinds = ",".join(sorted({v.kind for v in violations}))
        return _CandidateResult(
            index=index, completion=completion, failure=f"delta-rules:{kinds}"
        )
    try:
        code = delta_codec.apply_diffs(parent_code, parsed.diffs)
    except delta_codec.PatchError as exc:
        return _CandidateResult(
            index=index,
            completion=completion,
            failure=f"patch:{type(exc).__name__}",
        )
    return _CandidateResult(
        index=index, completion=completion, failure=None, code=code, parsed=parsed
    )


def step(
    state: RunState,
    provider: Provider,
    log: _RunLog | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RunState:
    """Advance the run by one iteration.

    Context is built once per iteration; all candidates of the iteration are
    generated and evaluated with bounded parallelism, then committed in
    candidate-index order so concurrency never changes the outcome.
    """
    config = state.config
    t = state.iteration + 1
    island = t % config.islands
    ctx = build_context(
        state.db,
        t,
        config.sampler,
        config.policy,
        substream(config.seed, t, "context"),
        island=island,
    )
    system, user = render_prompts(config.task, ctx)
    if log is not None:
        log.prompt(
            {
                "iteration": t,
                "parent": ctx.parent_id,
                "inspirations": [e.node_id for e in ctx.entries],
                "policy": config.policy.value,
                "system": system,
                "user": user,
            }
        )

    def produce(index: int) -> _CandidateResult:
        return _produce_candidate(
            config, provider, system, user, ctx.parent_code, t, index, sleep
        )

    # Generation runs sequentially in candidate-index order so stateful
    # offline providers consume responses deterministically; evaluation (the
    # expensive part) runs on workers with bounded parallelism.
    state.provider_calls += config.candidates_per_iteration
    results = [produce(index) for index in range(config.candidates_per_iteration)]

    def evaluated(result: _CandidateResult):
        if result.failure is not None or result.code is None:
            return None
        return evaluate(config.task, result.code)

    if config.candidates_per_iteration > 1:
        with ThreadPoolExecutor(max_workers=config.parallel_evaluations) as pool:
            reports = list(pool.map(evaluated, results))
    else:
        reports = [evaluated(results[0])]

    for result, report in zip(results, reports):
        if result.completion is not None:
            state.ledger.record(t, result.completion)
        child_id = None
        child_score = None
        rejection = result.failure
        outcome = rejection if rejection is not None else OUTCOME_INSERTED
        if rejection is None and report is not None:
            node = Node(
                id=state.next_node_id(),
                parent_id=ctx.parent_id,
                island=island,
                iteration=t,
                code=result.code,
                summary=result.parsed.summary,
                plan=result.parsed.plan,
                report=report,
                descriptor=state.db.descriptor(result.code),
                tokens=TokenCount(
                    prompt=result.completion.prompt_tokens,
                    completion=result.completion.completion_tokens,
                ),
            )
            state.db.insert(node)
            child_id = node.id
            child_score = report.combined_score
            if report.valid and report.combined_score > state.best_score:
                state.best_score = report.combined_score
                state.best_id = node.id
        if log is not None:
            totals = state.ledger.total()
            log.metrics(
                IterationRecord(
                    iteration=t,
                    candidate_index=result.index,
                    parent_id=ctx.parent_id,
                    policy=config.policy.value,
                    child_id=child_id,
                    rejection=rejection,
                    child_score=child_score,
                    best_score=state.best_score,
                    cumulative_prompt_tokens=totals.prompt,
                    cumulative_completion_tokens=totals.completion,
                    cumulative_tokens=totals.combined,
                    outcome=outcome,
                )
            )

    state.db.migrate(t)
    state.iteration = t
    return state


def save_checkpoint(state: RunState, path: str | Path) -> None:
    document = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": config_to_dict(state.config),
        "state": {
            "iteration": state.iteration,
            "best_id": state.best_id,
            "best_score": state.best_score,
            "node_counter": state.node_counter,
            "provider_calls": state.provider_calls,
            "rng_scheme": state.rng_scheme,
        },
        "database": state.db.to_document(),
        "ledger": state.ledger.to_document(),
    }
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, sort_keys=True))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> RunState:
    try:
        document = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if document.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema {document.get('schema_version')!r}"
        )
    try:
        config = config_from_dict(document["config"])
        db = EvolutionDatabase.from_document(document["database"])
        ledger = TokenLedger.from_document(document["ledger"])
        raw_state = document["state"]
        state = RunState(
            config=config,
            db=db,
            ledger=ledger,
            iteration=raw_state["iteration"],
            best_id=raw_state["best_id"],
            best_score=raw_state["best_score"],
            node_counter=raw_state["node_counter"],
            provider_calls=raw_state["provider_calls"],
            rng_scheme=raw_state.get("rng_scheme", ""),
        )
    except (KeyError, TypeError, ConfigError, DatabaseError) as exc:
        raise CheckpointError(f"unusable checkpoint: {exc}") from exc
    return state


def run(
    config: RunConfig,
    provider: Provider,
    run_dir: str | Path,
    resume: bool = False,
    sleep: Callable[[float], None] = time.sleep,
) -> RunSummary:
    """Execute up to ``max_iterations`` iterations, checkpointing as configured.

    With ``resume=True`` the existing checkpoint in ``run_dir`` is loaded,
    offline providers are fast-forwarded past already-consumed responses, and
    the metrics stream is appended to instead of truncated.
    """
    run_dir = Path(run_dir)
    started = time.monotonic()
    if resume:
        state = load_checkpoint(run_dir / CHECKPOINT_FILENAME)
        ours = config_to_dict(config)
        theirs = config_to_dict(state.config)
        # Extending the horizon is the one legitimate difference on resume.
        ours.pop("max_iterations")
        theirs.pop("max_iterations")
        if ours != theirs:
            raise CheckpointError("resume configuration differs from the checkpoint's")
        state.config = config
        if hasattr(provider, "skip"):
            provider.skip(state.provider_calls)
        log = _RunLog(run_dir, append=True)
    else:
        log = _RunLog(run_dir, append=False)
        state = initialize_state(config, log)

    try:
        while state.iteration < config.max_iterations:
            step(state, provider, log, sleep=sleep)
            if (
                config.checkpoint_interval > 0
                and state.iteration % config.checkpoint_interval == 0
            ):
                save_checkpoint(state, run_dir / CHECKPOINT_FILENAME)
        save_checkpoint(state, run_dir / CHECKPOINT_FILENAME)
    finally:
        log.close()

    totals = state.ledger.total()
    summary = RunSummary(
        best_score=state.best_score,
        best_node_id=state.best_id,
        prompt_tokens=totals.prompt,
        completion_tokens=totals.completion,
        total_tokens=totals.combined,
        wall_time=time.monotonic() - started,
        iterations=state.iteration,
    )
    (run_dir / SUMMARY_FILENAME).write_text(
        json.dumps(summary.to_dict(), sort_keys=True, indent=2)
    )
    return summary


@dataclass(frozen=True)
class AblationRow:
    policy: str
    best_score: float
    prompt_tokens: int
    completion_tokens: int
    total_tokens: int


def ablate(
    config: RunConfig,
    policies: Sequence[ContextPolicy],
    provider_factory: Callable[[], Provider],
    out_dir: str | Path,
    sleep: Callable[[float], None] = time.sleep,
) -> list[AblationRow]:
    """Run the same configuration once per policy with identical seeds.

    ``provider_factory`` must return a fresh provider per run so scripted
    fixtures replay identically for every policy.
    """
    if len(policies) < 2:
        raise ConfigError("ablation needs at least two policies")
    out_dir = Path(out_dir)
    rows: list[AblationRow] = []
    for policy in policies:
        policy_config = replace(config, policy=policy)
        summary = run(
            policy_config,
            provider_factory(),
            out_dir / policy.value,
            sleep=sleep,
        )
        rows.append(
            AblationRow(
                policy=policy.value,
                best_score=summary.best_score,
                prompt_tokens=summary.prompt_tokens,
                completion_tokens=summary.completion_tokens,
                total_tokens=summary.total_tokens,
            )
        )
    lines = ["policy,best_score,prompt_tokens,completion_tokens,total_tokens"]
    for row in rows:
        lines.append(
            f"{row.policy},{row.best_score!r},{row.prompt_tokens},"
            f"{row.completion_tokens},{row.total_tokens}"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows


def read_metrics(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / METRICS_FILENAME
    if not path.exists():
        raise MissingMetrics(f"no metrics stream at {path}")
    records = []
    for line in path.read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def report(run_dir: str | Path) -> tuple[Path, Path]:
    """Export the metrics stream as two plot-ready CSV tables.

    ``best_scores.csv`` holds (iteration, best_score, cumulative_tokens) with
    one row per iteration; ``candidates.csv`` holds
    (iteration, candidate_score, outcome) with one row per attempt.
    """
    run_dir = Path(run_dir)
    records = read_metrics(run_dir)

    best_rows = ["iteration,best_score,cumulative_tokens"]
    last_by_iteration: dict[int, dict] = {}
    for record in records:
        last_by_iteration[record["iteration"]] = record
    for iteration in sorted(last_by_iteration):
        record = last_by_iteration[iteration]
        best_rows.append(
            f"{iteration},{record['best_score']!r},{record['cumulative_tokens']}"
        )

    candidate_rows = ["iteration,candidate_score,outcome"]
    for record in records:
        score = record["child_score"]
        candidate_rows.append(
            f"{record['iteration']},{'' if score is None else repr(score)},"
            f"{record['outcome']}"
        )

    best_path = run_dir / "best_scores.csv"
    candidates_path = run_dir / "candidates.csv"
    best_path.write_text("\n".join(best_rows) + "\n")
    candidates_path.write_text("\n".join(candidate_rows) + "\n")
    return best_path, candidates_path
