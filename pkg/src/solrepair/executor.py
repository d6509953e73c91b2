"""Verification executors and error handling.

A completed body is spliced into the oracle source and handed to a backend:
either a compile-only adapter (solc) or a differential backend that checks
behavioural equivalence against the oracle. A scripted mock differential
backend ships here so the full loop runs offline; real fuzzers plug in
through a subprocess adapter contract.

Diagnostic line numbers are 1-based within the completed function body
(line 1 is the line holding the opening brace).
"""

from __future__ import annotations

import ast
import json
import random
import re
import subprocess
import time
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import (
    FunctionRecord,
    MalformedRecordError,
    MalformedSourceError,
    SOLIDITY_KEYWORDS,
    _IDENT_RE,
    _SIZED_TYPE_RE,
    _scan_functions,
    lex_identifiers,
    scrub,
)
from .retrieval import QUERY_IDENTIFIER, QUERY_LINE, Query

STATUS_PASS = "pass"
STATUS_COMPILE_ERROR = "compile_error"
STATUS_FUNCTIONAL_MISMATCH = "functional_mismatch"
STATUS_EXECUTOR_UNAVAILABLE = "executor_unavailable"
STATUSES = (
    STATUS_PASS,
    STATUS_COMPILE_ERROR,
    STATUS_FUNCTIONAL_MISMATCH,
    STATUS_EXECUTOR_UNAVAILABLE,
)

MOCK_EXECUTOR_SCHEMA = "mock-executor@1"

DEFAULT_TIMEOUT = 60.0

ERROR_KINDS = (
    "UndeclaredIdentifier",
    "Member",
    "IdentifierNotUnique",
    "IndexedExpression",
    "ImplicitlyConvertible",
    "Other",
)

# First matching pattern wins; anything unmatched is Other, so the
# classification is total over arbitrary compiler output.
DEFAULT_ERROR_PATTERNS: tuple[tuple[str, str], ...] = (
    ("UndeclaredIdentifier", r"[Uu]ndeclared identifier"),
    ("Member", r"\bMember\b"),
    ("IdentifierNotUnique", r"not unique"),
    ("IndexedExpression", r"[Ii]ndexed expression"),
    ("ImplicitlyConvertible", r"implicitly convertible"),
)


@dataclass(frozen=True)
class Diagnostic:
    """One executor finding, classified into the error taxonomy."""

    kind: str
    message: str
    line: int | None = None
    identifier: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown diagnostic kind {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "message": self.message,
            "line": self.line,
            "identifier": self.identifier,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Diagnostic":
        return cls(
            kind=payload["kind"],
            message=payload["message"],
            line=payload.get("line"),
            identifier=payload.get("identifier"),
        )


@dataclass(frozen=True)
class ExecutionVerdict:
    """Backend judgement on one completed source."""

    status: str
    diagnostics: tuple[Diagnostic, ...] = ()
    elapsed: float = 0.0
    backend: str = ""
    backend_version: str = ""
    backend_seed: int | None = None

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown verdict status {self.status!r}")
        if self.status == STATUS_PASS and self.diagnostics:
            raise ValueError("pass verdicts carry no diagnostics")
        if self.status == STATUS_COMPILE_ERROR and not self.diagnostics:
            raise ValueError("compile_error verdicts need at least one diagnostic")

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "diagnostics": [d.to_json() for d in self.diagnostics],
            "elapsed": self.elapsed,
            "backend": self.backend,
            "backend_version": self.backend_version,
            "backend_seed": self.backend_seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExecutionVerdict":
        return cls(
            status=payload["status"],
            diagnostics=tuple(Diagnostic.from_json(d) for d in payload["diagnostics"]),
            elapsed=payload.get("elapsed", 0.0),
            backend=payload.get("backend", ""),
            backend_version=payload.get("backend_version", ""),
            backend_seed=payload.get("backend_seed"),
        )


def classify_error(
    message: str,
    patterns: Sequence[tuple[str, str]] = DEFAULT_ERROR_PATTERNS,
    line: int | None = None,
    identifier: str | None = None,
) -> Diagnostic:
    """Classify a compiler message; unmatched messages map to Other."""
    kind = "Other"
    for candidate, pattern in patterns:
        if re.search(pattern, message):
            kind = candidate
            break
    if identifier is None:
        m = re.search(r'"([^"]+)"', message)
        identifier = m.group(1) if m else None
    if line is None:
        m = re.search(r":(\d+):(\d+)", message)
        line = int(m.group(1)) if m else None
    return Diagnostic(kind=kind, message=message, line=line, identifier=identifier)


def _function_map(text: str, path: str = "<source>") -> dict[str, tuple[str, str, int]]:
    """name -> (signature, body, body_start_offset) for body-bearing functions."""
    out: dict[str, tuple[str, str, int]] = {}
    for raw in _scan_functions(text, path):
        if raw.has_body:
            out[raw.name] = (
                text[raw.kw_offset : raw.body_start],
                text[raw.body_start : raw.body_end + 1],
                raw.body_start,
            )
    return out


def substitute_function(
    oracle_source: str, target: FunctionRecord, completed_body: str
) -> str:
    """Replace the target function's body in the oracle source.

    Everything outside the body is byte-identical to the oracle source. The
    target is located by name within its span; a record that cannot be found
    raises MalformedRecordError.
    """
    for raw in _scan_functions(oracle_source, target.source_id):
        if not raw.has_body:
            continue
        if raw.name != target.name:
            continue
        body_line = oracle_source.count("\n", 0, raw.body_start) + 1
        if not (target.span[0] <= body_line <= target.span[1]):
            continue
        return (
            oracle_source[: raw.body_start]
            + completed_body
            + oracle_source[raw.body_end + 1 :]
        )
    raise MalformedRecordError(
        f"{target.source_id}: function {target.name!r} not found within span {target.span}"
    )


# ---------------------------------------------------------------------------
# Mini expression evaluator for the scripted differential backend. Supports
# straight-line bodies: local declarations followed by `return <expr>;` with
# integer/boolean arithmetic. Anything richer falls back to text comparison.
# ---------------------------------------------------------------------------


class _EvalError(ValueError):
    pass


_TERNARY_RE = re.compile(r"^(.+?)\?(.+):(.+)$", re.S)


def _translate_expr(expr: str) -> str:
    m = _TERNARY_RE.match(expr)
    if m and "?" not in m.group(2) and "?" not in m.group(3):
        expr = f"(({m.group(2)}) if ({m.group(1)}) else ({m.group(3)}))"
    expr = expr.replace("&&", " and ").replace("||", " or ")
    expr = re.sub(r"!(?![=])", " not ", expr)
    expr = re.sub(r"\btrue\b", " True ", expr)
    expr = re.sub(r"\bfalse\b", " False ", expr)
    return expr


def _eval_node(node: ast.AST, env: dict) -> int | bool:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, bool)):
        return node.value
    if isinstance(node, ast.Name):
        if node.id == "True":
            return True
        if node.id == "False":
            return False
        if node.id not in env:
            raise _EvalError(f"unbound name {node.id!r}")
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        value = _eval_node(node.operand, env)
        if isinstance(node.op, ast.USub):
            return -value
        if isinstance(node.op, ast.UAdd):
            return value
        if isinstance(node.op, ast.Not):
            return not value
        raise _EvalError("unsupported unary operator")
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, env)
        right = _eval_node(node.right, env)
        op = node.op
        if isinstance(op, ast.Add):
            return left + right
        if isinstance(op, ast.Sub):
            return left - right
        if isinstance(op, ast.Mult):
            return left * right
        if isinstance(op, (ast.Div, ast.FloorDiv)):
            if right == 0:
                raise _EvalError("division by zero")
            return left // right
        if isinstance(op, ast.Mod):
            if right == 0:
                raise _EvalError("modulo by zero")
            return left % right
        if isinstance(op, ast.Pow):
            return left**right
        raise _EvalError("unsupported binary operator")
    if isinstance(node, ast.BoolOp):
        values = [_eval_node(v, env) for v in node.values]
        return all(values) if isinstance(node.op, ast.And) else any(values)
    if isinstance(node, ast.Compare):
        left = _eval_node(node.left, env)
        for op, comparator in zip(node.ops, node.comparators):
            right = _eval_node(comparator, env)
            ok = (
                left == right
                if isinstance(op, ast.Eq)
                else left != right
                if isinstance(op, ast.NotEq)
                else left < right
                if isinstance(op, ast.Lt)
                else left <= right
                if isinstance(op, ast.LtE)
                else left > right
                if isinstance(op, ast.Gt)
                else left >= right
                if isinstance(op, ast.GtE)
                else None
            )
            if ok is None:
                raise _EvalError("unsupported comparison")
            if not ok:
                return False
            left = right
        return True
    if isinstance(node, ast.IfExp):
        return (
            _eval_node(node.body, env)
            if _eval_node(node.test, env)
            else _eval_node(node.orelse, env)
        )
    raise _EvalError(f"unsupported expression node {type(node).__name__}")


def _eval_expr(expr: str, env: dict) -> int | bool:
    # Operator translation can leave leading whitespace, which eval-mode
    # parsing treats as an indent error.
    try:
        tree = ast.parse(_translate_expr(expr).strip(), mode="eval")
    except SyntaxError as exc:
        raise _EvalError(f"cannot parse expression {expr!r}: {exc}") from exc
    return _eval_node(tree.body, env)


_DECL_STMT_RE = re.compile(
    r"^(?:uint\d*|int\d*|bool)\s+([A-Za-z_$][A-Za-z0-9_$]*)\s*(?:=\s*(.+))?$", re.S
)
_RETURN_STMT_RE = re.compile(r"^return\s+(.+)$", re.S)


def interpret_body(body: str) -> list[tuple] | None:
    """Parse a body into (kind, ...) steps, or None when uninterpretable."""
    inner = body.strip()
    if not (inner.startswith("{") and inner.endswith("}")):
        return None
    statements = [s.strip() for s in inner[1:-1].split(";") if s.strip()]
    steps: list[tuple] = []
    for stmt in statements:
        decl = _DECL_STMT_RE.match(stmt)
        if decl:
            steps.append(("let", decl.group(1), decl.group(2)))
            continue
        ret = _RETURN_STMT_RE.match(stmt)
        if ret:
            steps.append(("return", ret.group(1)))
            continue
        return None
    return steps


def evaluate_body(steps: list[tuple], inputs: dict) -> int | bool | None:
    env = dict(inputs)
    for step in steps:
        if step[0] == "let":
            env[step[1]] = _eval_expr(step[2], env) if step[2] is not None else 0
        else:
            return _eval_expr(step[1], env)
    return None


def _param_names(signature: str) -> list[str]:
    m = re.search(r"\(([^)]*)\)", signature)
    if not m or not m.group(1).strip():
        return []
    names = []
    for part in m.group(1).split(","):
        tokens = part.strip().split()
        if tokens:
            names.append(tokens[-1])
    return names


def _generated_cases(param_names: Sequence[str], seed_text: str, count: int = 8) -> list[dict]:
    # Positive operands keep integer division and subtraction semantics
    # aligned between the evaluator and unsigned Solidity arithmetic.
    rng = random.Random(zlib.crc32(seed_text.encode("utf-8")))
    return [{p: rng.randrange(1, 100) for p in param_names} for _ in range(count)]


_DECLARED_PATTERNS = (
    r"\b(?:contract|interface|library|struct|enum|event|error|modifier)\s+([A-Za-z_$][A-Za-z0-9_$]*)",
    r"\bfunction\s+([A-Za-z_$][A-Za-z0-9_$]*)",
    r"\b(?:u?int\d*|bytes\d*|bool|address|string)\s+"
    r"(?:public\s+|private\s+|internal\s+|external\s+|constant\s+|immutable\s+"
    r"|memory\s+|storage\s+|calldata\s+)*([A-Za-z_$][A-Za-z0-9_$]*)",
    r"\)\s*(?:public\s+|private\s+|internal\s+)*([A-Za-z_$][A-Za-z0-9_$]*)\s*;",
)


def declared_names(text: str) -> set[str]:
    """Identifiers a source text visibly declares (heuristic, desk scale)."""
    scrubbed = scrub(text)
    names: set[str] = set()
    for pattern in _DECLARED_PATTERNS:
        names.update(m.group(1) for m in re.finditer(pattern, scrubbed))
    return names


def _checkable_idents(body: str) -> list[tuple[str, int]]:
    """Identifiers needing declarations, with offsets; member access skipped."""
    scrubbed = scrub(body)
    out = []
    for m in _IDENT_RE.finditer(scrubbed):
        ident = m.group(0)
        if ident in SOLIDITY_KEYWORDS or _SIZED_TYPE_RE.match(ident):
            continue
        before = scrubbed[: m.start()].rstrip()
        if before.endswith("."):
            continue
        out.append((ident, m.start()))
    return out


def _local_decl_names(body: str) -> set[str]:
    scrubbed = scrub(body)
    names = set()
    pattern = (
        r"\b(?:u?int\d*|bytes\d*|bool|address|string)"
        r"(?:\s+memory|\s+storage|\s+calldata)?\s+([A-Za-z_$][A-Za-z0-9_$]*)"
    )
    names.update(m.group(1) for m in re.finditer(pattern, scrubbed))
    return names


def _normalized(body: str) -> str:
    return " ".join(body.split())


def modified_function(
    oracle_source: str, completed_source: str
) -> list[str]:
    """Names of functions whose bodies differ between the two sources."""
    oracle = _function_map(oracle_source)
    completed = _function_map(completed_source)
    names = []
    for name, (_, body, _) in completed.items():
        if name not in oracle or oracle[name][1] != body:
            names.append(name)
    return names


class ScriptedDifferentialBackend:
    """Differential verification against scripted or generated input tables.

    Simple straight-line bodies are evaluated on the fixture's input/output
    cases (or deterministic generated inputs); richer bodies fall back to
    whitespace-insensitive text comparison. A lightweight declaration check
    models the compiler: identifiers used by a modified body and declared
    nowhere in the source produce a compile_error verdict.
    """

    name = "mock-diff"
    version = "mock-diff@1"

    def __init__(self, fixture: dict | str | Path | None = None, seed: int = 0) -> None:
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        self.fixture = fixture or {}
        declared = self.fixture.get("schema", MOCK_EXECUTOR_SCHEMA)
        if declared != MOCK_EXECUTOR_SCHEMA:
            raise ValueError(f"unsupported executor fixture schema {declared!r}")
        self.seed = seed

    def _verdict(
        self, t0: float, status: str, diagnostics: Iterable[Diagnostic] = ()
    ) -> ExecutionVerdict:
        return ExecutionVerdict(
            status=status,
            diagnostics=tuple(diagnostics),
            elapsed=time.perf_counter() - t0,
            backend=self.name,
            backend_version=self.version,
            backend_seed=self.seed,
        )

    def verify(
        self, oracle_source: str, completed_source: str, target_function_id: str
    ) -> ExecutionVerdict:
        t0 = time.perf_counter()
        try:
            oracle_fns = _function_map(oracle_source)
            completed_fns = _function_map(completed_source, "<completed>")
        except MalformedSourceError as exc:
            return self._verdict(
                t0, STATUS_COMPILE_ERROR, [Diagnostic("Other", str(exc))]
            )

        modified = [
            name
            for name, (_, body, _) in completed_fns.items()
            if name not in oracle_fns or oracle_fns[name][1] != body
        ]
        if not modified:
            return self._verdict(t0, STATUS_PASS)

        declared = declared_names(completed_source)
        for name in modified:
            signature, body, _ = completed_fns[name]
            local = set(_param_names(signature)) | _local_decl_names(body) | {name}
            for ident, offset in _checkable_idents(body):
                if ident in declared or ident in local:
                    continue
                line = body.count("\n", 0, offset) + 1
                return self._verdict(
                    t0,
                    STATUS_COMPILE_ERROR,
                    [
                        Diagnostic(
                            kind="UndeclaredIdentifier",
                            message=f'Undeclared identifier "{ident}".',
                            line=line,
                            identifier=ident,
                        )
                    ],
                )

        if len(modified) > 1:
            return self._verdict(
                t0,
                STATUS_FUNCTIONAL_MISMATCH,
                [Diagnostic("Other", f"multiple functions differ from oracle: {sorted(modified)}")],
            )
        name = modified[0]
        if name not in oracle_fns:
            return self._verdict(
                t0,
                STATUS_FUNCTIONAL_MISMATCH,
                [Diagnostic("Other", f"function {name!r} has no oracle counterpart")],
            )
        signature, oracle_body, _ = oracle_fns[name]
        _, completed_body, _ = completed_fns[name]

        table = self.fixture.get("functions", {}).get(target_function_id)
        oracle_steps = interpret_body(oracle_body)
        completed_steps = interpret_body(completed_body)
        if completed_steps is None or (oracle_steps is None and table is None):
            if _normalized(oracle_body) == _normalized(completed_body):
                return self._verdict(t0, STATUS_PASS)
            return self._verdict(
                t0,
                STATUS_FUNCTIONAL_MISMATCH,
                [
                    Diagnostic(
                        "Other",
                        "completed body differs from the oracle and cannot be evaluated",
                    )
                ],
            )

        if table is not None:
            cases = [(case["inputs"], case["output"]) for case in table["cases"]]
        else:
            generated = _generated_cases(_param_names(signature), f"{self.seed}:{name}")
            cases = []
            for inputs in generated:
                try:
                    cases.append((inputs, evaluate_body(oracle_steps, inputs)))
                except _EvalError as exc:
                    return self._verdict(
                        t0,
                        STATUS_EXECUTOR_UNAVAILABLE,
                        [Diagnostic("Other", f"oracle evaluation failed: {exc}")],
                    )
        for inputs, expected in cases:
            try:
                got = evaluate_body(completed_steps, inputs)
            except _EvalError as exc:
                return self._verdict(
                    t0,
                    STATUS_FUNCTIONAL_MISMATCH,
                    [
                        Diagnostic(
                            "Other",
                            f"evaluation failed for inputs "
                            f"{json.dumps(inputs, sort_keys=True)}: {exc}",
                        )
                    ],
                )
            if got != expected:
                return self._verdict(
                    t0,
                    STATUS_FUNCTIONAL_MISMATCH,
                    [
                        Diagnostic(
                            "Other",
                            f"output mismatch for inputs "
                            f"{json.dumps(inputs, sort_keys=True)}: "
                            f"expected {expected}, got {got}",
                        )
                    ],
                )
        return self._verdict(t0, STATUS_PASS)


class SolcCompileBackend:
    """Compile-only adapter over the solc binary (standard JSON interface).

    Warnings are ignored; a missing binary or a timeout yields
    executor_unavailable, never a model failure.
    """

    name = "solc"

    def __init__(
        self,
        solc_path: str = "solc",
        timeout: float = DEFAULT_TIMEOUT,
        patterns: Sequence[tuple[str, str]] = DEFAULT_ERROR_PATTERNS,
    ) -> None:
        self.solc_path = solc_path
        self.timeout = timeout
        self.patterns = patterns
        self._version: str | None = None

    @property
    def version(self) -> str:
        if self._version is None:
            try:
                out = subprocess.run(
                    [self.solc_path, "--version"],
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
                m = re.search(r"Version:\s*(\S+)", out.stdout)
                self._version = m.group(1) if m else out.stdout.strip()
            except (OSError, subprocess.TimeoutExpired):
                self._version = "unavailable"
        return self._version

    def compile(self, source: str) -> ExecutionVerdict:
        t0 = time.perf_counter()
        request = {
            "language": "Solidity",
            "sources": {"task.sol": {"content": source}},
            "settings": {"outputSelection": {"*": {"*": []}}},
        }

        def unavailable(reason: str) -> ExecutionVerdict:
            return ExecutionVerdict(
                status=STATUS_EXECUTOR_UNAVAILABLE,
                diagnostics=(Diagnostic("Other", reason),),
                elapsed=time.perf_counter() - t0,
                backend=self.name,
                backend_version=self._version or "",
            )

        try:
            proc = subprocess.run(
                [self.solc_path, "--standard-json"],
                input=json.dumps(request),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except FileNotFoundError:
            return unavailable(f"compiler binary {self.solc_path!r} not found")
        except subprocess.TimeoutExpired:
            return unavailable(f"compiler timed out after {self.timeout}s")
        try:
            output = json.loads(proc.stdout)
        except json.JSONDecodeError:
            return unavailable(f"compiler produced no JSON: {proc.stderr[:200]}")
        diagnostics = []
        for error in output.get("errors", []):
            if error.get("severity") != "error":
                continue
            message = error.get("formattedMessage") or error.get("message", "")
            diagnostics.append(classify_error(message, self.patterns))
        if diagnostics:
            return ExecutionVerdict(
                status=STATUS_COMPILE_ERROR,
                diagnostics=tuple(diagnostics),
                elapsed=time.perf_counter() - t0,
                backend=self.name,
                backend_version=self.version,
            )
        return ExecutionVerdict(
            status=STATUS_PASS,
            elapsed=time.perf_counter() - t0,
            backend=self.name,
            backend_version=self.version,
        )

    def verify(
        self, oracle_source: str, completed_source: str, target_function_id: str
    ) -> ExecutionVerdict:
        verdict = self.compile(completed_source)
        if verdict.status != STATUS_COMPILE_ERROR:
            return verdict
        rebased = tuple(
            self._rebase(d, oracle_source, completed_source) for d in verdict.diagnostics
        )
        return replace(verdict, diagnostics=rebased)

    @staticmethod
    def _rebase(
        diagnostic: Diagnostic, oracle_source: str, completed_source: str
    ) -> Diagnostic:
        """Rebase an absolute source line onto the modified function's body."""
        if diagnostic.line is None:
            return diagnostic
        try:
            names = modified_function(oracle_source, completed_source)
            if len(names) != 1:
                return diagnostic
            _, body, body_start = _function_map(completed_source)[names[0]]
        except (MalformedSourceError, KeyError):
            return diagnostic
        body_line = completed_source.count("\n", 0, body_start) + 1
        body_end_line = body_line + body.count("\n")
        if body_line <= diagnostic.line <= body_end_line:
            return replace(diagnostic, line=diagnostic.line - body_line + 1)
        return diagnostic


class SubprocessFuzzBackend:
    """Adapter for external differential fuzzers.

    Contract (documented in docs/formats.md): the command reads a
    fuzz-request@1 JSON object on stdin and writes a fuzz-report@1 JSON
    object on stdout, exiting 0. Any other behaviour is an infrastructure
    failure and maps to executor_unavailable.
    """

    def __init__(
        self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT, name: str = "fuzz"
    ) -> None:
        self.command = list(command)
        self.timeout = timeout
        self.name = name
        self.version = " ".join(self.command)

    def verify(
        self, oracle_source: str, completed_source: str, target_function_id: str
    ) -> ExecutionVerdict:
        t0 = time.perf_counter()
        request = {
            "schema": "fuzz-request@1",
            "oracle_source": oracle_source,
            "completed_source": completed_source,
            "target_function_id": target_function_id,
        }

        def unavailable(reason: str) -> ExecutionVerdict:
            return ExecutionVerdict(
                status=STATUS_EXECUTOR_UNAVAILABLE,
                diagnostics=(Diagnostic("Other", reason),),
                elapsed=time.perf_counter() - t0,
                backend=self.name,
                backend_version=self.version,
            )

        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(request),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except FileNotFoundError:
            return unavailable(f"fuzz command {self.command[0]!r} not found")
        except subprocess.TimeoutExpired:
            return unavailable(f"fuzz command timed out after {self.timeout}s")
        if proc.returncode != 0:
            return unavailable(
                f"fuzz command exited {proc.returncode}: {proc.stderr[:200]}"
            )
        try:
            report = json.loads(proc.stdout)
            status = report["status"]
            diagnostics = tuple(
                Diagnostic.from_json(d) for d in report.get("diagnostics", [])
            )
            return ExecutionVerdict(
                status=status,
                diagnostics=diagnostics,
                elapsed=time.perf_counter() - t0,
                backend=self.name,
                backend_version=str(report.get("version", self.version)),
                backend_seed=report.get("seed"),
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            return unavailable(f"fuzz report malformed: {exc}")


def compile_check(source: str, backend) -> ExecutionVerdict:
    """Compile-only verification through a compiler adapter."""
    compile_fn = getattr(backend, "compile", None)
    if compile_fn is not None:
        return compile_fn(source)
    return backend.verify(source, source, "")


def differential_verify(
    oracle_source: str,
    completed_source: str,
    target: FunctionRecord,
    backend,
) -> ExecutionVerdict:
    """Behavioural equivalence through a differential backend.

    Backend crashes are infrastructure failures (executor_unavailable), not
    model failures.
    """
    try:
        return backend.verify(oracle_source, completed_source, target.task_id())
    except Exception as exc:  # adapter bugs must not be charged to the model
        return ExecutionVerdict(
            status=STATUS_EXECUTOR_UNAVAILABLE,
            diagnostics=(
                Diagnostic("Other", f"backend {getattr(backend, 'name', '?')} raised: {exc}"),
            ),
            backend=getattr(backend, "name", "?"),
            backend_version=getattr(backend, "version", ""),
        )


def _faulty_line_text(verdict: ExecutionVerdict, completed_body: str) -> str | None:
    lines = completed_body.splitlines()
    for diagnostic in verdict.diagnostics:
        if diagnostic.line is not None and 1 <= diagnostic.line <= len(lines):
            text = lines[diagnostic.line - 1].strip()
            if text:
                return text
    return None


def build_queries(verdict: ExecutionVerdict, completed_body: str) -> list[Query]:
    """Retrieval queries from a failing verdict.

    Precedence: diagnostic identifiers, then the faulty line's text, then
    identifiers lexed from the completed body.
    """
    if verdict.status == STATUS_PASS:
        raise ValueError("a passing verdict yields no repair queries")
    identifiers: list[str] = []
    for diagnostic in verdict.diagnostics:
        if diagnostic.identifier and diagnostic.identifier not in identifiers:
            identifiers.append(diagnostic.identifier)
    if identifiers:
        return [Query(QUERY_IDENTIFIER, ident) for ident in identifiers]
    line_text = _faulty_line_text(verdict, completed_body)
    if line_text:
        return [Query(QUERY_LINE, line_text)]
    return [Query(QUERY_IDENTIFIER, i) for i in lex_identifiers(completed_body)]


def queries_for_method(
    method: str, verdict: ExecutionVerdict, completed_body: str
) -> list[Query]:
    """Method-aware query selection for the repair loop.

    Substring matching wants identifiers; bag-of-words and dense methods
    want the whole faulty line.
    """
    if method == "lcs":
        identifiers: list[str] = []
        for diagnostic in verdict.diagnostics:
            if diagnostic.identifier and diagnostic.identifier not in identifiers:
                identifiers.append(diagnostic.identifier)
        if not identifiers:
            line_text = _faulty_line_text(verdict, completed_body)
            if line_text:
                identifiers = lex_identifiers(line_text)
        if not identifiers:
            identifiers = lex_identifiers(completed_body)
        return [Query(QUERY_IDENTIFIER, ident) for ident in identifiers]
    line_text = _faulty_line_text(verdict, completed_body)
    if line_text:
        return [Query(QUERY_LINE, line_text)]
    for diagnostic in verdict.diagnostics:
        if diagnostic.message.strip():
            return [Query(QUERY_LINE, diagnostic.message.strip())]
    return []
