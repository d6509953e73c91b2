"""Token counting and token-budgeted context windows.

A context window is the longest whole-line suffix of the text preceding the
target function whose token count fits the budget. Counters are pluggable;
the default approximates subword tokenizers at roughly four UTF-8 bytes per
token, which keeps the harness free of model-specific tokenizer downloads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from .corpus import FunctionRecord, SourceFile

# Budget presets used by the sweep configs; any non-negative budget is valid.
CONTEXT_BUDGETS = (0, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768)


@runtime_checkable
class TokenCounter(Protocol):
    """Counting contract: count("") == 0 and counts are monotone under
    concatenation (count(a + b) >= count(a))."""

    name: str

    def count(self, text: str) -> int: ...


@dataclass(frozen=True)
class ApproxBytesCounter:
    """ceil(utf8_bytes / 4): a deterministic stand-in for a real tokenizer."""

    name: str = "bytes4"

    def count(self, text: str) -> int:
        return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class WordCounter:
    """Whitespace-separated word count; exact and easy to reason about in tests."""

    name: str = "words"

    def count(self, text: str) -> int:
        return len(text.split())


DEFAULT_COUNTER: TokenCounter = ApproxBytesCounter()

_COUNTERS: dict[str, TokenCounter] = {
    "bytes4": ApproxBytesCounter(),
    "words": WordCounter(),
}


def register_counter(counter: TokenCounter) -> None:
    """Make a counter available by name to configs and the CLI."""
    _COUNTERS[counter.name] = counter


def get_counter(name: str) -> TokenCounter:
    try:
        return _COUNTERS[name]
    except KeyError:
        known = ", ".join(sorted(_COUNTERS))
        raise ValueError(f"unknown token counter {name!r} (known: {known})") from None


def count_tokens(text: str, counter: TokenCounter = DEFAULT_COUNTER) -> int:
    return counter.count(text)


@dataclass(frozen=True)
class ContextWindow:
    """Context text handed to the model, plus its measured size."""

    text: str
    budget: int
    actual_tokens: int


def build_context(
    file: SourceFile,
    target: FunctionRecord,
    budget: int,
    counter: TokenCounter = DEFAULT_COUNTER,
) -> ContextWindow:
    """Largest whole-line suffix of the text before target that fits budget.

    Deterministic; budget 0 yields an empty window; a negative budget is an
    error. The target's own comment block and signature are not part of the
    window and do not count against the budget.
    """
    if budget < 0:
        raise ValueError(f"context budget must be non-negative, got {budget}")
    total_lines = file.text.count("\n") + (0 if file.text.endswith("\n") or not file.text else 1)
    if target.span[0] < 1 or target.span[1] > max(1, total_lines):
        raise ValueError(
            f"target span {target.span} outside {file.path} ({total_lines} lines)"
        )

    lines = file.text.splitlines(keepends=True)
    preceding = "".join(lines[: target.span[0] - 1])

    starts = [0]
    for line in preceding.splitlines(keepends=True):
        starts.append(starts[-1] + len(line))

    # count(suffix) shrinks as the start moves right (monotone counters), so
    # the first start index whose suffix fits can be found by bisection.
    lo, hi = 0, len(starts) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if counter.count(preceding[starts[mid] :]) <= budget:
            hi = mid
        else:
            lo = mid + 1
    text = preceding[starts[lo] :]
    return ContextWindow(text=text, budget=budget, actual_tokens=counter.count(text))
