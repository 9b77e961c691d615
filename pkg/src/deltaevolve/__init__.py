"""Evolutionary program search over a semantic-delta history.

The package implements an alternating search loop: sample candidate programs
from a language model conditioned on a compact context (the generation step),
then rebuild that context from the growing evolution history (the context
step). History is kept as multi-level nodes — strategy summary, modification
plan, full code — in an island-structured store with a MAP-Elites grid, and
the context sampler discloses old nodes at progressively coarser levels to
keep token cost down.
"""

from .context import (
    ContextPolicy,
    InspirationEntry,
    PromptContext,
    QualitativeShift,
    SamplerConfig,
    build_context,
    qualitative_shift,
    render_prompts,
)
from .controller import (
    AblationRow,
    ConfigError,
    CheckpointError,
    IterationRecord,
    RunConfig,
    RunState,
    RunSummary,
    ablate,
    config_from_dict,
    load_config,
    report,
    run,
    step,
)
from .database import (
    DescriptorVector,
    EvolutionDatabase,
    Node,
    SelectionConfig,
    TokenCount,
    compute_descriptor,
)
from .delta_codec import (
    DeltaModification,
    DeltaPlan,
    DeltaSummary,
    DiffBlock,
    ParsedResponse,
    apply_diffs,
    parse_response,
    render_delta,
    validate_delta,
)
from .evaluators import EvaluationReport, TaskSpec, evaluate
from .gateway import Completion, ModelSpec, TokenLedger, choose_model, generate
from .providers import HttpChatProvider, MutatorProvider, ScriptedProvider
from .tasks import builtin_task, seed_candidate

__version__ = "0.1.0"
