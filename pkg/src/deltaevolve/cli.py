"""Command-line interface.

Subcommands: ``run``, ``resume``, ``ablate``, ``report``, and ``validate``.
Exit codes: 0 on success, 2 for configuration errors, 3 for checkpoint
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .context import ContextPolicy
from .controller import (
    CHECKPOINT_FILENAME,
    CheckpointError,
    ConfigError,
    MissingMetrics,
    RunConfig,
    ablate,
    config_from_dict,
    load_checkpoint,
    load_config,
    report,
    run,
)
from .evaluators import evaluate
from .providers import HttpChatProvider, MutatorProvider, ScriptedProvider
from .tasks import builtin_task

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def make_provider(spec: str, config: RunConfig, seed: int):
    """Instantiate a provider from its CLI descriptor.

    ``http`` uses the endpoint settings from the run configuration;
    ``scripted:<path>`` replays a fixture file; ``mutator`` runs fully
    offline with the run seed.
    """
    if spec == "http":
        if not config.http.endpoint:
            raise ConfigError("http provider requires http.endpoint in the configuration")
        return HttpChatProvider(
            endpoint=config.http.endpoint,
            auth_env=config.http.auth_env,
            auth_header=config.http.auth_header,
        )
    if spec.startswith("scripted:"):
        path = spec.split(":", 1)[1]
        if not path:
            raise ConfigError("scripted provider needs a path: scripted:<path>")
        try:
            return ScriptedProvider(path)
        except OSError as exc:
            raise ConfigError(f"cannot read scripted fixture {path}: {exc}") from exc
    if spec == "mutator":
        return MutatorProvider(seed=seed)
    raise ConfigError(
        f"unknown provider {spec!r}; expected http, scripted:<path>, or mutator"
    )


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else config_from_dict({})
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "policy", None) is not None:
        try:
            overrides["policy"] = ContextPolicy(args.policy)
        except ValueError as exc:
            raise ConfigError(f"unknown policy {args.policy!r}") from exc
    if getattr(args, "iterations", None) is not None:
        overrides["max_iterations"] = args.iterations
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    provider = make_provider(args.provider, config, config.seed)
    summary = run(config, provider, args.out)
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_resume(args) -> int:
    checkpoint = Path(args.out) / CHECKPOINT_FILENAME
    state = load_checkpoint(checkpoint)
    config = state.config
    if args.iterations is not None:
        from dataclasses import replace

        config = replace(config, max_iterations=args.iterations)
    provider = make_provider(args.provider, config, config.seed)
    summary = run(config, provider, args.out, resume=True)
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    config = _load_run_config(args)
    try:
        policies = [ContextPolicy(p.strip()) for p in args.policies.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"unknown policy in {args.policies!r}") from exc

    def provider_factory():
        return make_provider(args.provider, config, config.seed)

    rows = ablate(config, policies, provider_factory, args.out)
    print("policy,best_score,prompt_tokens,completion_tokens,total_tokens")
    for row in rows:
        print(
            f"{row.policy},{row.best_score!r},{row.prompt_tokens},"
            f"{row.completion_tokens},{row.total_tokens}"
        )
    return EXIT_OK


def _cmd_report(args) -> int:
    best_path, candidates_path = report(args.run)
    print(best_path)
    print(candidates_path)
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.config:
        config = load_config(args.config)
        task = config.task
    else:
        try:
            task = builtin_task(args.task)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        candidate = Path(args.candidate).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read candidate {args.candidate}: {exc}") from exc
    result = evaluate(task, candidate)
    print(
        json.dumps(
            {
                "combined_score": result.combined_score,
                "per_case": dict(result.per_case),
                "valid": result.valid,
                "feedback": result.feedback,
                "evals_used": dict(result.evals_used),
                "wall_time": result.wall_time,
            },
            sort_keys=True,
            indent=2,
        )
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltaevolve",
        description="Evolutionary program search over a semantic-delta history",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to a JSON run configuration")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--policy", help="override the context policy")
        p.add_argument("--iterations", type=int, help="override max_iterations")
        p.add_argument(
            "--provider",
            default="mutator",
            help="http | scripted:<path> | mutator",
        )

    p_run = sub.add_parser("run", help="execute an evolution run")
    add_common(p_run)
    p_run.add_argument("--out", required=True, help="run output directory")
    p_run.set_defaults(func=_cmd_run)

    p_resume = sub.add_parser("resume", help="continue a checkpointed run")
    p_resume.add_argument("--out", required=True, help="run output directory")
    p_resume.add_argument("--iterations", type=int, help="new max_iterations horizon")
    p_resume.add_argument(
        "--provider", default="mutator", help="http | scripted:<path> | mutator"
    )
    p_resume.set_defaults(func=_cmd_resume)

    p_ablate = sub.add_parser("ablate", help="compare context policies")
    add_common(p_ablate)
    p_ablate.add_argument("--out", required=True, help="ablation output directory")
    p_ablate.add_argument(
        "--policies",
        required=True,
        help="comma-separated policy names (at least two)",
    )
    p_ablate.set_defaults(func=_cmd_ablate)

    p_report = sub.add_parser("report", help="export plot-ready metrics tables")
    p_report.add_argument("--run", required=True, help="run directory with metrics")
    p_report.set_defaults(func=_cmd_report)

    p_validate = sub.add_parser(
        "validate", help="evaluate one candidate file against a task"
    )
    p_validate.add_argument("--task", default="hexagon", help="built-in task name")
    p_validate.add_argument("--config", help="configuration supplying the task")
    p_validate.add_argument("--candidate", required=True, help="candidate file")
    p_validate.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingMetrics as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    raise SystemExit(main())
