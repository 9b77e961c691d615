"""Provider-agnostic model access with retries and token accounting.

``generate`` wraps any provider with retry-on-transient-failure semantics
(exponential backoff 1s/2s/4s) and fills in token counts, estimating
ceil(characters / 4) whenever the provider does not report usage. The
:class:`TokenLedger` accumulates one record per model call; the controller
records a zero-completion entry for failed calls so accounting stays closed.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .providers import Provider, ProviderError, RawCompletion


class EmptyEnsemble(ValueError):
    pass


class UnnormalizedWeights(ValueError):
    pass


class RetriesExhausted(RuntimeError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


@dataclass(frozen=True)
class ModelSpec:
    """One ensemble member and its sampling parameters."""

    name: str
    weight: float = 1.0
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 8192
    timeout: float = 600.0


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    model: str
    latency: float
    estimated: bool = False  # True when token counts came from chars/4
    retries: int = 0


@dataclass(frozen=True)
class LedgerRecord:
    iteration: int
    prompt_tokens: int
    completion_tokens: int
    model: str
    estimated: bool = False


@dataclass(frozen=True)
class TokenTotals:
    prompt: int
    completion: int
    combined: int


class TokenLedger:
    """Append-only token accounting across all model calls of a run.

    Appends are serialized with a lock; totals are order-independent sums.
    """

    def __init__(self) -> None:
        self._records: list[LedgerRecord] = []
        self._lock = threading.Lock()
        self._prompt = 0
        self._completion = 0

    def record(self, iteration: int, completion: Completion) -> LedgerRecord:
        entry = LedgerRecord(
            iteration=iteration,
            prompt_tokens=completion.prompt_tokens,
            completion_tokens=completion.completion_tokens,
            model=completion.model,
            estimated=completion.estimated,
        )
        with self._lock:
            self._records.append(entry)
            self._prompt += entry.prompt_tokens
            self._completion += entry.completion_tokens
        return entry

    def records(self) -> list[LedgerRecord]:
        with self._lock:
            return list(self._records)

    def total(self) -> TokenTotals:
        with self._lock:
            return TokenTotals(
                prompt=self._prompt,
                completion=self._completion,
                combined=self._prompt + self._completion,
            )

    def audit(self) -> bool:
        """Re-sum all records and confirm the running totals match."""
        with self._lock:
            prompt = sum(r.prompt_tokens for r in self._records)
            completion = sum(r.completion_tokens for r in self._records)
            return prompt == self._prompt and completion == self._completion

    def to_document(self) -> list[dict]:
        return [
            {
                "iteration": r.iteration,
                "prompt_tokens": r.prompt_tokens,
                "completion_tokens": r.completion_tokens,
                "model": r.model,
                "estimated": r.estimated,
            }
            for r in self.records()
        ]

    @classmethod
    def from_document(cls, doc: list[dict]) -> "TokenLedger":
        ledger = cls()
        for raw in doc:
            ledger.record(
                raw["iteration"],
                Completion(
                    text="",
                    prompt_tokens=raw["prompt_tokens"],
                    completion_tokens=raw["completion_tokens"],
                    model=raw["model"],
                    latency=0.0,
                    estimated=raw.get("estimated", False),
                ),
            )
        return ledger


def estimate_tokens(text: str) -> int:
    """Character-count fallback when a provider reports no usage."""
    return math.ceil(len(text) / 4)


def choose_model(
    ensemble: Sequence[ModelSpec], rng: np.random.Generator
) -> ModelSpec:
    """Categorical draw over the ensemble by weight."""
    if not ensemble:
        raise EmptyEnsemble("ensemble must contain at least one model")
    total = sum(spec.weight for spec in ensemble)
    if abs(total - 1.0) > 1e-9:
        raise UnnormalizedWeights(f"ensemble weights sum to {total}, expected 1")
    draw = rng.random()
    cumulative = 0.0
    for spec in ensemble:
        cumulative += spec.weight
        if draw < cumulative:
            return spec
    return ensemble[-1]


BACKOFF_SCHEDULE = (1.0, 2.0, 4.0)


def generate(
    provider: Provider,
    system: str,
    user: str,
    spec: ModelSpec,
    max_retries: int = 3,
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    """One model call with retries on transient failures.

    Raises the provider's error unchanged when it is permanent, and
    RetriesExhausted after ``max_retries`` transient failures.
    """
    attempts = 0
    last_error: Exception | None = None
    start = time.monotonic()
    while attempts <= max_retries:
        attempts += 1
        try:
            raw: RawCompletion = provider.complete(system, user, spec)
        except ProviderError as exc:
            last_error = exc
            if not exc.transient:
                raise
            if attempts > max_retries:
                break
            backoff = BACKOFF_SCHEDULE[min(attempts - 1, len(BACKOFF_SCHEDULE) - 1)]
            sleep(backoff)
            continue
        latency = time.monotonic() - start
        estimated = raw.prompt_tokens is None or raw.completion_tokens is None
        prompt_tokens = (
            raw.prompt_tokens
            if raw.prompt_tokens is not None
            else estimate_tokens(system + user)
        )
        completion_tokens = (
            raw.completion_tokens
            if raw.completion_tokens is not None
            else estimate_tokens(raw.text)
        )
        return Completion(
            text=raw.text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            model=spec.name,
            latency=latency,
            estimated=estimated,
            retries=attempts - 1,
        )
    raise RetriesExhausted(attempts, last_error or RuntimeError("unknown failure"))


def failure_completion(system: str, user: str, spec: ModelSpec) -> Completion:
    """Ledger entry for a call that produced no completion."""
    return Completion(
        text="",
        prompt_tokens=estimate_tokens(system + user),
        completion_tokens=0,
        model=spec.name,
        latency=0.0,
        estimated=True,
    )
