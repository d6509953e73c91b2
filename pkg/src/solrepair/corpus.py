"""Corpus construction for Solidity function-completion tasks.

Extracts commented functions from .sol sources, filters out functions whose
behaviour depends on chain state or privileged callers, removes exact
duplicates, and writes the retained records to a JSONL task file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

TASKS_SCHEMA = "tasks@1"
STATS_SCHEMA = "corpus-stats@1"

VERIFICATION_STATEMENT = "uint256 this_is_a_test_variable;"

# Identifier runs and single punctuation marks; shared by retrieval and
# surface metrics so scores are comparable across modules.
_TERM_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")
_IDENT_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")
# Safe to match anywhere: these are reserved words, and the text is scrubbed
# of comments and strings before matching.
_TYPE_DECL_RE = re.compile(
    r"\b(?:abstract\s+)?(?:contract|interface|library)\s+([A-Za-z_$][A-Za-z0-9_$]*)"
)
_FUNCTION_KW_RE = re.compile(r"\bfunction\b")

# Reserved words and built-in globals that never count as user identifiers.
SOLIDITY_KEYWORDS = frozenset(
    """
    abstract address anonymous as assembly assert bool break bytes calldata
    case catch constant constructor continue contract days default delete do
    else emit enum error ether event external fallback false final for from
    function gwei hours if immutable import indexed interface internal is
    let library mapping memory minutes modifier new override payable pragma
    private public pure receive require return returns revert seconds
    solidity storage string struct super switch this throw true try type
    unchecked using view virtual weeks wei while
    abi block msg tx now gasleft keccak256 sha256 ripemd160 ecrecover
    addmod mulmod selfdestruct blockhash unicode
    """.split()
)
_SIZED_TYPE_RE = re.compile(r"^(?:u?int\d*|bytes\d*|u?fixed\d*x?\d*)$")


class MalformedSourceError(ValueError):
    """Raised when source text cannot be scanned (unbalanced braces)."""


class MalformedRecordError(ValueError):
    """Raised when a function record does not match its claimed source."""


def tokenize_terms(text: str) -> list[str]:
    """Split text into identifier runs and single punctuation marks.

    Case-sensitive; whitespace never yields tokens.
    """
    return _TERM_RE.findall(text)


def lex_identifiers(text: str) -> list[str]:
    """Identifiers in order of first appearance, keywords and literals removed.

    Comments and string literals are blanked before lexing.
    """
    seen: list[str] = []
    for ident in _IDENT_RE.findall(scrub(text)):
        if ident in SOLIDITY_KEYWORDS or _SIZED_TYPE_RE.match(ident):
            continue
        if ident not in seen:
            seen.append(ident)
    return seen


def scrub(text: str) -> str:
    """Blank out comments and string literals, preserving length and newlines.

    Brace matching and identifier lexing run on the scrubbed text so literals
    cannot confuse them.
    """
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if ch == "/" and nxt == "/":
            j = text.find("\n", i)
            j = n if j == -1 else j
            for k in range(i, j):
                out[k] = " "
            i = j
        elif ch == "/" and nxt == "*":
            j = text.find("*/", i + 2)
            j = n if j == -1 else j + 2
            for k in range(i, j):
                if text[k] != "\n":
                    out[k] = " "
            i = j
        elif ch in "\"'":
            j = i + 1
            while j < n and text[j] != ch:
                j += 2 if text[j] == "\\" else 1
            j = min(j + 1, n)
            for k in range(i, j):
                if text[k] != "\n":
                    out[k] = " "
            i = j
        else:
            i += 1
    return "".join(out)


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    last_nl = text.rfind("\n", 0, offset)
    return line, offset - last_nl


def check_balanced(text: str, path: str = "<source>") -> None:
    """Raise MalformedSourceError naming the first unmatched brace."""
    scrubbed = scrub(text)
    stack: list[int] = []
    for idx, ch in enumerate(scrubbed):
        if ch == "{":
            stack.append(idx)
        elif ch == "}":
            if not stack:
                line, col = _line_col(text, idx)
                raise MalformedSourceError(
                    f"{path}: unmatched '}}' at line {line}, column {col}"
                )
            stack.pop()
    if stack:
        line, col = _line_col(text, stack[0])
        raise MalformedSourceError(
            f"{path}: unmatched '{{' at line {line}, column {col}"
        )


@dataclass(frozen=True)
class SourceFile:
    """A Solidity source file plus the type names it declares."""

    path: str
    text: str
    contract_names: tuple[str, ...] = ()

    @classmethod
    def from_text(cls, path: str, text: str) -> "SourceFile":
        names = tuple(m.group(1) for m in _TYPE_DECL_RE.finditer(scrub(text)))
        return cls(path=path, text=text, contract_names=names)

    @classmethod
    def load(cls, path: str | Path) -> "SourceFile":
        p = Path(path)
        return cls.from_text(str(p), p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class _RawFunction:
    """Char-offset view of one function declaration in a source text."""

    name: str
    kw_offset: int        # offset of the 'function' keyword
    body_start: int       # offset of '{' (-1 when the declaration has no body)
    body_end: int         # offset of matching '}' (-1 when no body)

    @property
    def has_body(self) -> bool:
        return self.body_start != -1


def _scan_functions(text: str, path: str = "<source>") -> list[_RawFunction]:
    """Locate every named function declaration, in source order.

    Raises MalformedSourceError on unbalanced braces. Operates on scrubbed
    text so braces inside strings or comments are ignored.
    """
    check_balanced(text, path)
    scrubbed = scrub(text)
    raws: list[_RawFunction] = []
    for kw in _FUNCTION_KW_RE.finditer(scrubbed):
        pos = kw.end()
        while pos < len(scrubbed) and scrubbed[pos].isspace():
            pos += 1
        name_match = _IDENT_RE.match(scrubbed, pos)
        if name_match is None:
            continue  # unnamed fallback/receive style declarations
        pos = name_match.end()
        while pos < len(scrubbed) and scrubbed[pos] != "(":
            if not scrubbed[pos].isspace():
                break
            pos += 1
        if pos >= len(scrubbed) or scrubbed[pos] != "(":
            continue
        depth = 0
        body_start = -1
        while pos < len(scrubbed):
            ch = scrubbed[pos]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif depth == 0 and ch == "{":
                body_start = pos
                break
            elif depth == 0 and ch == ";":
                break
            pos += 1
        if body_start == -1:
            raws.append(_RawFunction(name_match.group(0), kw.start(), -1, -1))
            continue
        depth = 0
        body_end = -1
        for idx in range(body_start, len(scrubbed)):
            if scrubbed[idx] == "{":
                depth += 1
            elif scrubbed[idx] == "}":
                depth -= 1
                if depth == 0:
                    body_end = idx
                    break
        raws.append(_RawFunction(name_match.group(0), kw.start(), body_start, body_end))
    return raws


@dataclass(frozen=True)
class FunctionRecord:
    """One extracted function: comment block, signature, body, and location.

    The span is 1-based and inclusive, covering comment through closing
    brace. Concatenating comment + signature + body reproduces the source
    slice for that span, modulo leading indentation per line.
    """

    source_id: str
    comment: str
    signature: str
    body: str
    span: tuple[int, int]
    contract_type: str | None = None

    def __post_init__(self) -> None:
        if not self.comment.strip():
            raise MalformedRecordError(f"{self.source_id}: empty comment block")
        if self.span[0] < 1 or self.span[1] < self.span[0]:
            raise MalformedRecordError(f"{self.source_id}: invalid span {self.span}")

    @property
    def name(self) -> str:
        m = re.search(r"function\s+([A-Za-z_$][A-Za-z0-9_$]*)", self.signature)
        if m is None:
            raise MalformedRecordError(f"{self.source_id}: no function name in signature")
        return m.group(1)

    def rendered(self) -> str:
        return self.comment + self.signature + self.body

    def dedup_key(self) -> str:
        # Trailing whitespace per line is insignificant for duplicate detection.
        return "\n".join(line.rstrip() for line in self.rendered().splitlines())

    def task_id(self) -> str:
        return f"{self.source_id}#L{self.span[0]}-{self.span[1]}"


def _comment_block_top(lines: list[str], sig_line: int) -> int:
    """First line of the comment block directly above sig_line, else sig_line.

    A block is a maximal run of `//`/`///` lines or a `/* .. */` block with
    no blank line between it and the signature. Anything else (blank line,
    code) terminates the walk upward.
    """
    top = sig_line
    i = sig_line - 1
    while i >= 1:
        stripped = lines[i - 1].strip()
        if not stripped:
            break
        if stripped.startswith("//"):
            top = i
            i -= 1
            continue
        if stripped.endswith("*/"):
            j = i
            while j >= 1:
                lead = lines[j - 1].lstrip()
                if lead.startswith("/*"):
                    break
                if not lead:
                    j = 0
                    break
                j -= 1
            if j >= 1 and lines[j - 1].lstrip().startswith("/*"):
                top = j
                i = j - 1
                continue
        break
    return top


def extract_functions(file: SourceFile) -> list[FunctionRecord]:
    """Extract every commented, body-bearing function from a source file.

    Deterministic and order-stable. Functions without a directly preceding
    comment block are omitted; unbalanced sources raise MalformedSourceError.
    """
    raws = _scan_functions(file.text, file.path)
    lines = file.text.splitlines(keepends=True)
    offsets = [0]
    for ln in lines:
        offsets.append(offsets[-1] + len(ln))

    def line_of(offset: int) -> int:
        return file.text.count("\n", 0, offset) + 1

    records: list[FunctionRecord] = []
    for raw in raws:
        if not raw.has_body:
            continue
        sig_line = line_of(raw.kw_offset)
        top = _comment_block_top(lines, sig_line)
        if top == sig_line:
            continue
        comment = file.text[offsets[top - 1] : offsets[sig_line - 1]]
        signature = file.text[raw.kw_offset : raw.body_start]
        body = file.text[raw.body_start : raw.body_end + 1]
        span = (top, line_of(raw.body_end))
        records.append(
            FunctionRecord(
                source_id=file.path,
                comment=comment,
                signature=signature,
                body=body,
                span=span,
            )
        )
    return records


def count_function_declarations(file: SourceFile) -> int:
    """Number of body-bearing function declarations, commented or not."""
    return sum(1 for raw in _scan_functions(file.text, file.path) if raw.has_body)


def inject_verification_statement(record: FunctionRecord) -> FunctionRecord:
    """Insert the sentinel declaration as the first statement of the body.

    The sentinel gives a differential tester a guaranteed textual difference
    to notice while leaving behaviour unchanged.
    """
    brace = record.body.find("{")
    if brace == -1:
        raise MalformedRecordError(f"{record.source_id}: body has no opening brace")
    rest = record.body[brace + 1 :]
    insert = " " + VERIFICATION_STATEMENT
    if rest[:1] and not rest[0].isspace():
        insert += " "
    return replace(record, body=record.body[: brace + 1] + insert + rest)


@dataclass(frozen=True)
class FilterConfig:
    """Heuristic deny-list for state- or privilege-dependent functions."""

    mint_identifiers: tuple[str, ...] = ("mint", "_mint")
    owner_modifiers: tuple[str, ...] = ("onlyOwner",)
    owner_check_pattern: str = (
        r"msg\s*\.\s*sender\s*[=!]=\s*\w*[Oo]wner\w*"
        r"|\w*[Oo]wner\w*\s*[=!]=\s*msg\s*\.\s*sender"
    )
    deny_identifiers: tuple[str, ...] = ("constructor",)


DEFAULT_FILTER_CONFIG = FilterConfig()


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None
    detail: str | None = None


def _match_deny_list(
    signature: str, body: str, config: FilterConfig
) -> tuple[str, str] | None:
    """Return (reason, detail) when the function trips the deny-list."""
    idents = set(lex_identifiers(body))
    for mint in config.mint_identifiers:
        if mint in idents:
            return "mint", mint
    sig_idents = set(_IDENT_RE.findall(scrub(signature)))
    for modifier in config.owner_modifiers:
        if modifier in sig_idents:
            return "owner-modifier", modifier
    m = re.search(config.owner_check_pattern, scrub(body))
    if m:
        return "owner-check", m.group(0)
    for deny in config.deny_identifiers:
        if deny in _IDENT_RE.findall(scrub(body)):
            return "constructor", deny
    return None


def filter_state_dependent(
    record: FunctionRecord,
    file: SourceFile,
    config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> FilterDecision:
    """Decide whether a record is safe to keep as a completion task.

    Checks the function itself, then every same-file function it transitively
    references, against the deny-list. Matches report a reason so exclusion
    counts can be bucketed.
    """
    hit = _match_deny_list(record.signature, record.body, config)
    if hit:
        return FilterDecision(keep=False, reason=hit[0], detail=hit[1])

    raws = {raw.name: raw for raw in _scan_functions(file.text, file.path) if raw.has_body}
    visited = {record.name}
    frontier = [i for i in lex_identifiers(record.body) if i in raws and i not in visited]
    while frontier:
        name = frontier.pop(0)
        if name in visited:
            continue
        visited.add(name)
        raw = raws[name]
        signature = file.text[raw.kw_offset : raw.body_start]
        body = file.text[raw.body_start : raw.body_end + 1]
        hit = _match_deny_list(signature, body, config)
        if hit:
            return FilterDecision(keep=False, reason=hit[0], detail=f"via {name}: {hit[1]}")
        frontier.extend(
            i for i in lex_identifiers(body) if i in raws and i not in visited
        )
    return FilterDecision(keep=True)


@dataclass
class FilterReport:
    """Bookkeeping for one corpus build.

    Invariant: retained + excluded_* + dedup_removed == total_extracted, and
    duplication_rate == dedup_removed / max(1, total_extracted - exclusions).
    """

    total_extracted: int = 0
    excluded_no_comment: int = 0
    excluded_state_dependent: int = 0
    excluded_mint: int = 0
    retained: int = 0
    dedup_removed: int = 0
    duplication_rate: float = 0.0

    def exclusions(self) -> int:
        return (
            self.excluded_no_comment
            + self.excluded_state_dependent
            + self.excluded_mint
        )

    def to_json(self) -> dict:
        return {
            "schema": STATS_SCHEMA,
            "total_extracted": self.total_extracted,
            "excluded_no_comment": self.excluded_no_comment,
            "excluded_state_dependent": self.excluded_state_dependent,
            "excluded_mint": self.excluded_mint,
            "retained": self.retained,
            "dedup_removed": self.dedup_removed,
            "duplication_rate": self.duplication_rate,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FilterReport":
        fields = {k: v for k, v in payload.items() if k != "schema"}
        return cls(**fields)


def dedup_exact(
    records: Iterable[FunctionRecord],
) -> tuple[list[FunctionRecord], FilterReport]:
    """Drop exact duplicates (trailing whitespace ignored), keeping first seen."""
    records = list(records)
    seen: set[str] = set()
    kept: list[FunctionRecord] = []
    for record in records:
        key = record.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        kept.append(record)
    removed = len(records) - len(kept)
    report = FilterReport(
        total_extracted=len(records),
        retained=len(kept),
        dedup_removed=removed,
        duplication_rate=removed / max(1, len(records)),
    )
    return kept, report


def jaccard_overlap(a: FunctionRecord, b: FunctionRecord) -> float:
    """Jaccard similarity of the records' token sets (1.0 when both empty)."""
    ta = set(tokenize_terms(a.rendered()))
    tb = set(tokenize_terms(b.rendered()))
    union = ta | tb
    if not union:
        return 1.0
    return len(ta & tb) / len(union)


def build_corpus(
    files: Iterable[SourceFile],
    config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> tuple[list[FunctionRecord], FilterReport]:
    """Extract, filter, and dedup across files; return records plus counts."""
    report = FilterReport()
    pool: list[FunctionRecord] = []
    for file in files:
        declared = count_function_declarations(file)
        records = extract_functions(file)
        report.total_extracted += declared
        report.excluded_no_comment += declared - len(records)
        for record in records:
            decision = filter_state_dependent(record, file, config)
            if decision.keep:
                pool.append(record)
            elif decision.reason == "mint":
                report.excluded_mint += 1
            else:
                report.excluded_state_dependent += 1
    kept, dedup_report = dedup_exact(pool)
    report.retained = len(kept)
    report.dedup_removed = dedup_report.dedup_removed
    report.duplication_rate = report.dedup_removed / max(1, len(pool))
    return kept, report


def write_task_file(records: Iterable[FunctionRecord], path: str | Path) -> int:
    """Write records as JSONL task rows; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            row = {
                "id": record.task_id(),
                "source_path": record.source_id,
                "comment": record.comment,
                "signature": record.signature,
                "body": record.body,
                "span": list(record.span),
                "contract_type": record.contract_type,
            }
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_task_file(path: str | Path) -> list[tuple[str, FunctionRecord]]:
    """Load (task_id, record) pairs from a JSONL task file."""
    out: list[tuple[str, FunctionRecord]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            record = FunctionRecord(
                source_id=row["source_path"],
                comment=row["comment"],
                signature=row["signature"],
                body=row["body"],
                span=(row["span"][0], row["span"][1]),
                contract_type=row.get("contract_type"),
            )
            out.append((row["id"], record))
    return out
