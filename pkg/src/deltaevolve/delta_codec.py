"""Parsing and rendering of structured mutation responses.

A mutation response carries three artifacts:

* SEARCH/REPLACE diff blocks that patch the parent program,
* a FROM/TO strategy summary (level 1) between ``#DELTA-SUMMARY-START`` and
  ``#DELTA-SUMMARY-END``,
* a numbered modification plan (level 2) between
  ``#DELTA-PLAN-DETAILS-START`` and ``#DELTA-PLAN-DETAILS-END``.

Everything here is a pure function over strings, so the codec is safe to use
from any number of concurrent workers. Parsing is total: any input produces
either a :class:`ParsedResponse` or a typed :class:`ResponseFormatError`;
a format error means the response should be discarded and the iteration
retried.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SUMMARY_START = "#DELTA-SUMMARY-START"
SUMMARY_END = "#DELTA-SUMMARY-END"
PLAN_START = "#DELTA-PLAN-DETAILS-START"
PLAN_END = "#DELTA-PLAN-DETAILS-END"

SEARCH_MARKER = "<<<<<<< SEARCH"
DIVIDER_MARKER = "======="
REPLACE_MARKER = ">>>>>>> REPLACE"

_PLAN_KEYS = ("COMPONENT", "OLD_LOGIC", "NEW_LOGIC", "HYPOTHESIS")
_MODIFICATION_RE = re.compile(r"\[\s*modification\s+(\d+)\s*\]", re.IGNORECASE)


class ResponseFormatError(ValueError):
    """Base class for all reject-and-retry parse failures."""


class MissingDeltaSummary(ResponseFormatError):
    pass


class MissingDeltaPlan(ResponseFormatError):
    pass


class MissingDiff(ResponseFormatError):
    pass


class MalformedSection(ResponseFormatError):
    """A section delimiter was opened but could not be closed properly."""

    def __init__(self, message: str, offset: int, delimiter: str):
        super().__init__(f"{message} (byte offset {offset}, delimiter {delimiter!r})")
        self.offset = offset
        self.delimiter = delimiter


class PatchError(ValueError):
    """Base class for diff application failures."""


class SearchNotFound(PatchError):
    def __init__(self, block_index: int, search: str):
        super().__init__(
            f"diff block {block_index}: search text not found: {search[:80]!r}"
        )
        self.block_index = block_index


class AmbiguousSearch(PatchError):
    def __init__(self, block_index: int, count: int):
        super().__init__(
            f"diff block {block_index}: search text matches {count} locations; "
            "refusing to patch ambiguously"
        )
        self.block_index = block_index
        self.count = count


@dataclass(frozen=True)
class DeltaSummary:
    """One-sentence FROM/TO description of the strategy change."""

    from_strategy: str
    to_strategy: str


@dataclass(frozen=True)
class DeltaModification:
    component: str
    old_logic: str
    new_logic: str
    hypothesis: str


@dataclass(frozen=True)
class DeltaPlan:
    """Ordered list of component-level modifications with hypotheses."""

    modifications: tuple[DeltaModification, ...]


@dataclass(frozen=True)
class DiffBlock:
    """Exact-match search text and its replacement (empty = deletion)."""

    search: str
    replace: str


@dataclass(frozen=True)
class ParsedResponse:
    diffs: tuple[DiffBlock, ...]
    summary: DeltaSummary
    plan: DeltaPlan
    raw_text: str


@dataclass(frozen=True)
class Violation:
    """One machine-checkable formatting rule broken by a parsed delta."""

    kind: str  # "placeholder-text" | "empty-field" | "empty-plan"
    location: str
    detail: str = ""


@dataclass
class _Line:
    text: str
    offset: int  # byte offset of the line start in the utf-8 encoding


def _split_lines(text: str) -> list[_Line]:
    lines = []
    offset = 0
    for raw in text.split("\n"):
        lines.append(_Line(raw, offset))
        offset += len(raw.encode("utf-8")) + 1
    return lines


def _delimiter_pattern(token: str) -> re.Pattern[str]:
    # Tolerate leading markdown heading characters / whitespace and trailing
    # whitespace; matching is case-insensitive. The token's own leading '#'
    # is folded into the prefix class.
    return re.compile(r"[#\s]*" + re.escape(token.lstrip("#")) + r"\s*\Z", re.IGNORECASE)


_DELIM_PATTERNS = {
    token: _delimiter_pattern(token)
    for token in (SUMMARY_START, SUMMARY_END, PLAN_START, PLAN_END)
}


def _is_delimiter(line: str, token: str) -> bool:
    return bool(_DELIM_PATTERNS[token].match(line))


def _find_section(
    lines: list[_Line], start_token: str, end_token: str
) -> tuple[list[_Line], tuple[int, int]] | None:
    """Locate the body between a start/end delimiter pair.

    Returns (body lines, (start line index, end line index)) or None when the
    start delimiter never occurs. Raises MalformedSection when the start
    delimiter is present but the end delimiter is missing.
    """
    start_idx = None
    for i, line in enumerate(lines):
        if _is_delimiter(line.text, start_token):
            start_idx = i
            break
    if start_idx is None:
        return None
    for j in range(start_idx + 1, len(lines)):
        if _is_delimiter(lines[j].text, end_token):
            return lines[start_idx + 1 : j], (start_idx, j)
    raise MalformedSection(
        f"section opened by {start_token} is never closed",
        lines[start_idx].offset,
        end_token,
    )


def _key_match(line: str, keys: tuple[str, ...]) -> tuple[str, str] | None:
    stripped = line.lstrip()
    for key in keys:
        m = re.match(re.escape(key) + r"\s*:", stripped, re.IGNORECASE)
        if m:
            return key, stripped[m.end() :].strip()
    return None


def _parse_summary_lines(lines: list[_Line]) -> DeltaSummary:
    fields: dict[str, list[str]] = {}
    current: str | None = None
    for line in lines:
        # Plan content ends any summary value, so a level-2 rendering can be
        # parsed as one block.
        if _MODIFICATION_RE.search(line.text) and line.text.strip().startswith("["):
            current = None
            continue
        if _key_match(line.text, _PLAN_KEYS):
            current = None
            continue
        hit = _key_match(line.text, ("FROM", "TO"))
        if hit:
            current = hit[0]
            fields.setdefault(current, [])
            if hit[1]:
                fields[current].append(hit[1])
        elif current is not None and line.text.strip():
            fields[current].append(line.text.strip())
    from_text = "\n".join(fields.get("FROM", [])).strip()
    to_text = "\n".join(fields.get("TO", [])).strip()
    if not from_text or not to_text:
        raise MissingDeltaSummary(
            "delta summary must contain non-empty FROM: and TO: entries"
        )
    return DeltaSummary(from_strategy=from_text, to_strategy=to_text)


def parse_summary_block(text: str) -> DeltaSummary:
    """Parse a bare summary body (no delimiters) into a DeltaSummary."""
    return _parse_summary_lines(_split_lines(text))


def _parse_plan_lines(lines: list[_Line]) -> DeltaPlan:
    # Split into [Modification k] sections first.
    sections: list[tuple[int, list[_Line]]] = []
    current_body: list[_Line] | None = None
    for line in lines:
        m = _MODIFICATION_RE.search(line.text)
        if m and line.text.strip().startswith("["):
            current_body = []
            sections.append((int(m.group(1)), current_body))
        elif current_body is not None:
            current_body.append(line)
    if not sections:
        raise MissingDeltaPlan("no [Modification k] sections found in delta plan")

    indices = [idx for idx, _ in sections]
    if indices != list(range(1, len(indices) + 1)):
        raise MissingDeltaPlan(
            f"modification indices must be contiguous from 1, got {indices}"
        )

    modifications = []
    for idx, body in sections:
        values: dict[str, list[str]] = {}
        current_key: str | None = None
        for line in body:
            hit = _key_match(line.text, _PLAN_KEYS)
            if hit:
                current_key = hit[0]
                values.setdefault(current_key, [])
                if hit[1]:
                    values[current_key].append(hit[1])
            elif current_key is not None and line.text.strip():
                values[current_key].append(line.text.strip())
        parsed: dict[str, str] = {}
        for key in _PLAN_KEYS:
            value = "\n".join(values.get(key, [])).strip()
            if not value:
                raise MissingDeltaPlan(
                    f"[Modification {idx}] is missing a non-empty {key}: entry"
                )
            parsed[key] = value
        modifications.append(
            DeltaModification(
                component=parsed["COMPONENT"],
                old_logic=parsed["OLD_LOGIC"],
                new_logic=parsed["NEW_LOGIC"],
                hypothesis=parsed["HYPOTHESIS"],
            )
        )
    return DeltaPlan(modifications=tuple(modifications))


def parse_plan_block(text: str) -> DeltaPlan:
    """Parse a bare plan body (no delimiters) into a DeltaPlan."""
    return _parse_plan_lines(_split_lines(text))


def parse_diff_blocks(text: str) -> list[DiffBlock]:
    """Extract SEARCH/REPLACE blocks in document order.

    Marker lines must match exactly after stripping surrounding whitespace.
    An opened block that never reaches its REPLACE marker raises
    MalformedSection.
    """
    lines = _split_lines(text)
    blocks: list[DiffBlock] = []
    i = 0
    while i < len(lines):
        if lines[i].text.strip() != SEARCH_MARKER:
            i += 1
            continue
        start = lines[i]
        search_lines: list[str] = []
        replace_lines: list[str] = []
        j = i + 1
        while j < len(lines) and lines[j].text.strip() != DIVIDER_MARKER:
            search_lines.append(lines[j].text)
            j += 1
        if j >= len(lines):
            raise MalformedSection(
                "diff block has no ======= divider", start.offset, DIVIDER_MARKER
            )
        j += 1
        while j < len(lines) and lines[j].text.strip() != REPLACE_MARKER:
            replace_lines.append(lines[j].text)
            j += 1
        if j >= len(lines):
            raise MalformedSection(
                "diff block is never closed", start.offset, REPLACE_MARKER
            )
        search = "\n".join(search_lines)
        if not search:
            raise MalformedSection(
                "diff block has an empty SEARCH body", start.offset, SEARCH_MARKER
            )
        blocks.append(DiffBlock(search=search, replace="\n".join(replace_lines)))
        i = j + 1
    return blocks


def parse_response(text: str) -> ParsedResponse:
    """Parse a full mutation response into diffs, summary, and plan.

    Raises MissingDeltaSummary, MissingDeltaPlan, MissingDiff, or
    MalformedSection; each means the response must be rejected.
    """
    lines = _split_lines(text)

    summary_section = _find_section(lines, SUMMARY_START, SUMMARY_END)
    if summary_section is None:
        raise MissingDeltaSummary(
            f"no {SUMMARY_START} / {SUMMARY_END} section in response"
        )
    summary = _parse_summary_lines(summary_section[0])

    plan_section = _find_section(lines, PLAN_START, PLAN_END)
    if plan_section is None:
        raise MissingDeltaPlan(f"no {PLAN_START} / {PLAN_END} section in response")
    plan = _parse_plan_lines(plan_section[0])

    # Diff blocks are searched outside the delta sections so that quoted
    # markers inside OLD_LOGIC/NEW_LOGIC text cannot masquerade as patches.
    excluded = set()
    for _, (lo, hi) in (summary_section, plan_section):
        excluded.update(range(lo, hi + 1))
    diff_text = "\n".join(l.text for i, l in enumerate(lines) if i not in excluded)
    diffs = parse_diff_blocks(diff_text)
    if not diffs:
        raise MissingDiff("response contains no SEARCH/REPLACE diff blocks")

    return ParsedResponse(
        diffs=tuple(diffs), summary=summary, plan=plan, raw_text=text
    )


def apply_diffs(code: str, diffs: list[DiffBlock] | tuple[DiffBlock, ...]) -> str:
    """Apply diff blocks in order, each against the already-patched text.

    Each search text must occur exactly once in the current text; zero
    occurrences raise SearchNotFound and two or more raise AmbiguousSearch,
    keeping patching deterministic.
    """
    patched = code
    for index, block in enumerate(diffs, start=1):
        count = patched.count(block.search)
        if count == 0:
            raise SearchNotFound(index, block.search)
        if count > 1:
            raise AmbiguousSearch(index, count)
        patched = patched.replace(block.search, block.replace, 1)
    return patched


def render_delta(summary: DeltaSummary, plan: DeltaPlan, level: int) -> str:
    """Render a delta at disclosure level 1 (summary) or 2 (full plan).

    The output round-trips through :func:`parse_summary_block` /
    :func:`parse_plan_block`.
    """
    if level not in (1, 2):
        raise ValueError(f"level must be 1 or 2, got {level!r}")
    lines = [
        f"FROM: {summary.from_strategy}",
        f"TO: {summary.to_strategy}",
    ]
    if level == 2:
        for k, mod in enumerate(plan.modifications, start=1):
            lines.append("")
            lines.append(f"[Modification {k}]")
            lines.append(f"COMPONENT: {mod.component}")
            lines.append(f"OLD_LOGIC: {mod.old_logic}")
            lines.append(f"NEW_LOGIC: {mod.new_logic}")
            lines.append(f"HYPOTHESIS: {mod.hypothesis}")
    return "\n".join(lines)


def _check_field(kind_list: list[Violation], location: str, value: str) -> None:
    if not value.strip():
        kind_list.append(Violation("empty-field", location, "field is empty"))
    elif "<" in value and ">" in value:
        kind_list.append(
            Violation(
                "placeholder-text",
                location,
                "field still contains angle-bracket template text",
            )
        )


def validate_delta(summary: DeltaSummary, plan: DeltaPlan) -> list[Violation]:
    """Check the machine-verifiable formatting rules for a parsed delta.

    Covers placeholder text (a field containing both '<' and '>'), empty
    fields, and an empty modification list. Rules that need semantic judgment
    are deliberately not checked here.
    """
    violations: list[Violation] = []
    _check_field(violations, "summary.FROM", summary.from_strategy)
    _check_field(violations, "summary.TO", summary.to_strategy)
    if not plan.modifications:
        violations.append(Violation("empty-plan", "plan", "plan has no modifications"))
    for k, mod in enumerate(plan.modifications, start=1):
        _check_field(violations, f"modification {k}: COMPONENT", mod.component)
        _check_field(violations, f"modification {k}: OLD_LOGIC", mod.old_logic)
        _check_field(violations, f"modification {k}: NEW_LOGIC", mod.new_logic)
        _check_field(violations, f"modification {k}: HYPOTHESIS", mod.hypothesis)
    return violations
