"""Completion providers: HTTP chat endpoint, scripted replay, offline mutator.

All providers implement ``complete(system, user, spec) -> RawCompletion`` and
must be safely shareable across worker threads. The scripted and mutator
providers exist so full evolution runs can execute deterministically with no
network access.
"""

from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

import numpy as np
import requests

from . import prompts
from .delta_codec import (
    DIVIDER_MARKER,
    PLAN_END,
    PLAN_START,
    REPLACE_MARKER,
    SEARCH_MARKER,
    SUMMARY_END,
    SUMMARY_START,
)

if TYPE_CHECKING:
    from .gateway import ModelSpec

SCRIPT_SEPARATOR = "===SCRIPTED-RESPONSE-SEPARATOR==="

_FLOAT_RE = re.compile(r"-?\d+\.\d+(?:[eE][+-]?\d+)?")

# First line of the diff-format footer; everything between the parent header
# and this line is the parent program.
_PARENT_END_LINE = "Suggest improvements to the program that will improve its FITNESS SCORE."


@dataclass(frozen=True)
class RawCompletion:
    """Provider output before token accounting; None counts mean 'estimate'."""

    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class ProviderError(RuntimeError):
    def __init__(
        self,
        message: str,
        status: int | None = None,
        body_excerpt: str = "",
        transient: bool = False,
    ):
        super().__init__(message)
        self.status = status
        self.body_excerpt = body_excerpt
        self.transient = transient


class GenerationTimeout(ProviderError):
    def __init__(self, message: str):
        super().__init__(message, transient=True)


class Provider(Protocol):
    def complete(self, system: str, user: str, spec: "ModelSpec") -> RawCompletion: ...


class HttpChatProvider:
    """Chat-completions-style HTTP client.

    The endpoint URL, auth header name, and the environment variable holding
    the credential all come from configuration. 5xx and 429 responses are
    transient (retried by the gateway); other client errors are permanent.
    """

    def __init__(
        self,
        endpoint: str,
        auth_env: str = "",
        auth_header: str = "Authorization",
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.auth_header = auth_header
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            credential = os.environ.get(self.auth_env, "")
            if not credential:
                raise ProviderError(
                    f"auth environment variable {self.auth_env!r} is not set"
                )
            if self.auth_header.lower() == "authorization":
                credential = f"Bearer {credential}"
            headers[self.auth_header] = credential
        return headers

    @staticmethod
    def build_request_body(system: str, user: str, spec: "ModelSpec") -> dict:
        return {
            "model": spec.name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": spec.temperature,
            "top_p": spec.top_p,
            "max_tokens": spec.max_tokens,
        }

    @staticmethod
    def parse_response_body(body: dict) -> RawCompletion:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {exc}") from exc
        usage = body.get("usage") or {}
        return RawCompletion(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )

    def complete(self, system: str, user: str, spec: "ModelSpec") -> RawCompletion:
        try:
            response = self._session.post(
                self.endpoint,
                json=self.build_request_body(system, user, spec),
                headers=self._headers(),
                timeout=spec.timeout,
            )
        except requests.Timeout as exc:
            raise GenerationTimeout(f"request timed out after {spec.timeout}s") from exc
        except requests.RequestException as exc:
            raise ProviderError(f"request failed: {exc}", transient=True) from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise ProviderError(
                f"server error {response.status_code}",
                status=response.status_code,
                body_excerpt=response.text[:200],
                transient=True,
            )
        if response.status_code >= 400:
            raise ProviderError(
                f"client error {response.status_code}",
                status=response.status_code,
                body_excerpt=response.text[:200],
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise ProviderError(f"response is not JSON: {exc}") from exc
        return self.parse_response_body(body)


class ScriptedProvider:
    """Replays canned responses from a multi-document fixture file.

    Documents are separated by a line equal to ``SCRIPT_SEPARATOR``. Replay
    is strictly in order and raises a permanent error once exhausted;
    ``skip`` fast-forwards past responses consumed before a resume.
    """

    def __init__(self, path: str | Path) -> None:
        text = Path(path).read_text()
        parts = []
        current: list[str] = []
        for line in text.split("\n"):
            if line.strip() == SCRIPT_SEPARATOR:
                parts.append("\n".join(current))
                current = []
            else:
                current.append(line)
        parts.append("\n".join(current))
        self.responses = [p.strip("\n") for p in parts if p.strip()]
        self._index = 0
        self._lock = threading.Lock()

    @property
    def consumed(self) -> int:
        return self._index

    def skip(self, count: int) -> None:
        with self._lock:
            self._index += count

    def complete(self, system: str, user: str, spec: "ModelSpec") -> RawCompletion:
        with self._lock:
            if self._index >= len(self.responses):
                raise ProviderError(
                    f"scripted provider exhausted after {len(self.responses)} responses"
                )
            text = self.responses[self._index]
            self._index += 1
        return RawCompletion(text=text)


class MutatorProvider:
    """Offline generator: perturbs numeric constants in the parent program.

    The parent program is read back out of the user prompt, a few
    unique-line float literals are nudged with seeded Gaussian noise, and a
    well-formed response (SEARCH/REPLACE diffs plus summary and plan) is
    synthesized. Per-call randomness is derived from (seed, call index), so
    runs replay exactly and ``skip`` supports resuming.
    """

    def __init__(self, seed: int = 0, sigma: float = 0.05, max_edits: int = 3) -> None:
        if max_edits < 1:
            raise ValueError("max_edits must be >= 1")
        self.seed = seed
        self.sigma = sigma
        self.max_edits = max_edits
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def consumed(self) -> int:
        return self._calls

    def skip(self, count: int) -> None:
        with self._lock:
            self._calls += count

    @staticmethod
    def extract_parent_program(user_prompt: str) -> str:
        try:
            after_header = user_prompt.split(prompts.PARENT_PROGRAM_HEADER, 1)[1]
            program = after_header.split(_PARENT_END_LINE, 1)[0]
        except IndexError as exc:
            raise ProviderError("user prompt has no parent program section") from exc
        return program.strip("\n")

    def _pick_edits(
        self, parent: str, rng: np.random.Generator
    ) -> list[tuple[str, str, float, float]]:
        """Choose (line, patched line, old value, new value) edits.

        Only lines that occur exactly once in the parent are candidates, so
        the emitted searches stay unambiguous.
        """
        lines = parent.split("\n")
        candidates: list[tuple[int, re.Match]] = []
        for line_no, line in enumerate(lines):
            if parent.count(line) != 1:
                continue
            for match in _FLOAT_RE.finditer(line):
                candidates.append((line_no, match))
        if not candidates:
            return []
        want = 1 + int(rng.integers(self.max_edits))
        order = rng.permutation(len(candidates))
        edits: list[tuple[str, str, float, float]] = []
        used_lines: set[int] = set()
        for idx in order:
            line_no, match = candidates[int(idx)]
            if line_no in used_lines:
                continue
            line = lines[line_no]
            old_value = float(match.group(0))
            noise = float(rng.standard_normal())
            new_value = old_value + self.sigma * max(abs(old_value), 1.0) * noise
            new_line = line[: match.start()] + repr(new_value) + line[match.end() :]
            edits.append((line, new_line, old_value, new_value))
            used_lines.add(line_no)
            if len(edits) >= want:
                break
        return edits

    def complete(self, system: str, user: str, spec: "ModelSpec") -> RawCompletion:
        with self._lock:
            call_index = self._calls
            self._calls += 1
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, call_index)))
        parent = self.extract_parent_program(user)
        edits = self._pick_edits(parent, rng)
        if not edits:
            raise ProviderError("parent program has no perturbable constants")

        chunks: list[str] = []
        for line, new_line, _, _ in edits:
            chunks.append(
                f"{SEARCH_MARKER}\n{line}\n{DIVIDER_MARKER}\n{new_line}\n{REPLACE_MARKER}"
            )
        old_values = ", ".join(repr(old) for _, _, old, _ in edits)
        new_values = ", ".join(repr(new) for _, _, _, new in edits)
        chunks.append(
            f"{SUMMARY_START}\n"
            f"FROM: Solution using constants {old_values}.\n"
            f"TO: Solution with those constants Gaussian-perturbed to {new_values} "
            f"(sigma {self.sigma}).\n"
            f"{SUMMARY_END}"
        )
        plan_lines = [PLAN_START]
        for k, (_, _, old, new) in enumerate(edits, start=1):
            plan_lines += [
                f"[Modification {k}]",
                f"COMPONENT: Numeric constant {old!r}",
                f"OLD_LOGIC: Uses the value {old!r}.",
                f"NEW_LOGIC: Uses the value {new!r} drawn from a Gaussian around the "
                f"old value with sigma {self.sigma}.",
                "HYPOTHESIS: A small move of this constant may shift the solution "
                "toward a better objective value.",
                "",
            ]
        plan_lines.append(PLAN_END)
        chunks.append("\n".join(plan_lines))
        return RawCompletion(text="\n\n".join(chunks))
