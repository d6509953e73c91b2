"""Model clients, repair strategies, and the complete/verify/repair loop.

The loop: complete the function, verify through an executor backend, and on
failure retrieve snippets from the context window, build a strategy-specific
repair prompt, and try again, up to max_rounds repair rounds. Prompt
templates are versioned text assets under solrepair/prompts/.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

from .context import DEFAULT_COUNTER, ContextWindow, TokenCounter
from .corpus import FunctionRecord, MalformedRecordError, MalformedSourceError, scrub
from .executor import (
    Diagnostic,
    ExecutionVerdict,
    STATUS_COMPILE_ERROR,
    STATUS_EXECUTOR_UNAVAILABLE,
    STATUS_PASS,
    differential_verify,
    queries_for_method,
    substitute_function,
)
from .retrieval import (
    EmbeddingProvider,
    RetrievalConfig,
    RetrievedSnippet,
    lcs_retrieve_multi,
    retrieve,
)

DEFAULT_MAX_TOKENS = 1024
DEFAULT_MAX_ROUNDS = 1

STRATEGY_KINDS = ("self_edit", "self_debug", "self_refine", "self_repair")

SESSIONS_SCHEMA = "sessions@1"
MOCK_CLIENT_SCHEMA = "mock-client@1"


class ModelClientError(RuntimeError):
    """A model call failed after retries; retryable at the harness level."""


@dataclass(frozen=True)
class ModelReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


@runtime_checkable
class ModelClient(Protocol):
    name: str

    def complete(self, prompt: str, max_tokens: int) -> ModelReply: ...


@dataclass(frozen=True)
class RepairStrategy:
    """One of the four repair prompt styles.

    self_refine is the only strategy that never sees executor output; the
    others embed the raw diagnostics verbatim.
    """

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown repair strategy {self.kind!r}")

    @property
    def uses_executor_feedback(self) -> bool:
        return self.kind != "self_refine"


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedModelClient:
    """Replays completions from a fixture keyed by prompt hash.

    Fixture schema mock-client@1: {"schema", "strict", "completions":
    {sha256(prompt): completion_text}}. Strict fixtures raise on unknown
    prompts, which catches silent prompt drift in tests.
    """

    name = "scripted"

    def __init__(
        self,
        fixture: dict | str | Path,
        counter: TokenCounter = DEFAULT_COUNTER,
    ) -> None:
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        declared = fixture.get("schema", MOCK_CLIENT_SCHEMA)
        if declared != MOCK_CLIENT_SCHEMA:
            raise ValueError(f"unsupported client fixture schema {declared!r}")
        self.completions: dict[str, str] = fixture["completions"]
        self.strict: bool = fixture.get("strict", True)
        self.counter = counter

    def complete(self, prompt: str, max_tokens: int) -> ModelReply:
        key = prompt_hash(prompt)
        text = self.completions.get(key)
        if text is None:
            if self.strict:
                raise ModelClientError(
                    f"no scripted completion for prompt hash {key[:16]}"
                )
            text = "{ }"
        return ModelReply(
            text=text,
            prompt_tokens=self.counter.count(prompt),
            completion_tokens=self.counter.count(text),
        )


class RateLimiter:
    """Global requests-per-minute cap shared across worker threads."""

    def __init__(self, per_minute: int) -> None:
        self.per_minute = per_minute
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        if self.per_minute <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            time.sleep(max(wait, 0.01))


class HttpModelClient:
    """Chat-completions style JSON-over-HTTP client.

    The API key is read from an environment variable and never logged.
    Transient failures (429, 5xx, network) retry with backoff before raising
    ModelClientError.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "MODEL_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 2,
        temperature: float = 0.0,
        rate_limiter: RateLimiter | None = None,
        counter: TokenCounter = DEFAULT_COUNTER,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.name = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.temperature = temperature
        self.rate_limiter = rate_limiter
        self.counter = counter

    def complete(self, prompt: str, max_tokens: int) -> ModelReply:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            "temperature": self.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                if response.status_code in (429,) or response.status_code >= 500:
                    raise ModelClientError(f"HTTP {response.status_code}")
                response.raise_for_status()
                data = response.json()
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage", {})
                return ModelReply(
                    text=text,
                    prompt_tokens=usage.get("prompt_tokens", self.counter.count(prompt)),
                    completion_tokens=usage.get(
                        "completion_tokens", self.counter.count(text)
                    ),
                )
            except Exception as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(min(2.0**attempt, 8.0))
        raise ModelClientError(f"model call failed: {last_error}") from last_error


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

_TEMPLATE_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in _TEMPLATE_CACHE:
        path = resources.files("solrepair").joinpath(f"prompts/{name}.txt")
        _TEMPLATE_CACHE[name] = path.read_text(encoding="utf-8")
    return _TEMPLATE_CACHE[name]


SNIPPETS_HEADER = "Retrieved Code Snippets"


def _snippets_section(snippets: Sequence[RetrievedSnippet]) -> str:
    if not snippets:
        return ""
    lines = [f"{SNIPPETS_HEADER}:"]
    for snippet in snippets:
        lines.append(f"[line {snippet.line_index}] {snippet.text}")
    return "\n".join(lines) + "\n\n"


def _context_section(context: ContextWindow) -> str:
    if not context.text:
        return ""
    return f"Preceding contract context:\n{context.text}\n\n"


def feedback_block(verdict: ExecutionVerdict) -> str:
    """Raw diagnostics joined into the contiguous block shown to the model."""
    return "\n".join(d.message for d in verdict.diagnostics)


@dataclass(frozen=True)
class CompletionTask:
    """Everything needed to complete and verify one function."""

    task_id: str
    record: FunctionRecord
    context: ContextWindow
    oracle_source: str


def build_completion_prompt(task: CompletionTask) -> str:
    return load_template("complete.v1").format(
        context_section=_context_section(task.context),
        comment=task.record.comment,
        signature=task.record.signature,
    )


_FENCE_RE = re.compile(r"```[A-Za-z]*\n(.*?)```", re.S)


def extract_code_block(text: str) -> str:
    """First balanced-brace block of the reply, fences stripped first.

    Replies without a balanced block come back stripped as-is; the executor
    then reports the malformed body instead of the parser guessing.
    """
    m = _FENCE_RE.search(text)
    candidate = m.group(1) if m else text
    scrubbed = scrub(candidate)
    start = scrubbed.find("{")
    if start != -1:
        depth = 0
        for idx in range(start, len(scrubbed)):
            if scrubbed[idx] == "{":
                depth += 1
            elif scrubbed[idx] == "}":
                depth -= 1
                if depth == 0:
                    return candidate[start : idx + 1]
    return candidate.strip()


@dataclass(frozen=True)
class Attempt:
    """One model call and its verification outcome."""

    stage: str  # "completion" or "repair"
    prompt: str
    completion: str
    body: str
    prompt_tokens: int
    completion_tokens: int
    verdict: ExecutionVerdict | None = None
    snippets: tuple[RetrievedSnippet, ...] = ()
    explanation_prompt: str = ""
    explanation: str = ""
    explanation_prompt_tokens: int = 0
    explanation_completion_tokens: int = 0

    def with_verdict(self, verdict: ExecutionVerdict) -> "Attempt":
        return replace(self, verdict=verdict)

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "prompt": self.prompt,
            "completion": self.completion,
            "body": self.body,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "verdict": self.verdict.to_json() if self.verdict else None,
            "snippets": [s.to_json() for s in self.snippets],
            "explanation_prompt": self.explanation_prompt,
            "explanation": self.explanation,
            "explanation_prompt_tokens": self.explanation_prompt_tokens,
            "explanation_completion_tokens": self.explanation_completion_tokens,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Attempt":
        verdict = payload.get("verdict")
        return cls(
            stage=payload["stage"],
            prompt=payload["prompt"],
            completion=payload["completion"],
            body=payload["body"],
            prompt_tokens=payload["prompt_tokens"],
            completion_tokens=payload["completion_tokens"],
            verdict=ExecutionVerdict.from_json(verdict) if verdict else None,
            snippets=tuple(
                RetrievedSnippet.from_json(s) for s in payload.get("snippets", [])
            ),
            explanation_prompt=payload.get("explanation_prompt", ""),
            explanation=payload.get("explanation", ""),
            explanation_prompt_tokens=payload.get("explanation_prompt_tokens", 0),
            explanation_completion_tokens=payload.get("explanation_completion_tokens", 0),
        )


@dataclass(frozen=True)
class RepairSession:
    """All attempts for one task sample, in order."""

    task_id: str
    strategy: str
    max_rounds: int
    attempts: tuple[Attempt, ...]
    sample_index: int = 0

    def __post_init__(self) -> None:
        if not self.attempts:
            raise ValueError("a session records at least the completion attempt")
        if len(self.attempts) > 1 + self.max_rounds:
            raise ValueError("more attempts than 1 + max_rounds")

    @property
    def final_status(self) -> str:
        last = self.attempts[-1].verdict
        return last.status if last else STATUS_EXECUTOR_UNAVAILABLE

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "sample": self.sample_index,
            "strategy": self.strategy,
            "max_rounds": self.max_rounds,
            "final_status": self.final_status,
            "attempts": [a.to_json() for a in self.attempts],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RepairSession":
        return cls(
            task_id=payload["task_id"],
            strategy=payload["strategy"],
            max_rounds=payload["max_rounds"],
            attempts=tuple(Attempt.from_json(a) for a in payload["attempts"]),
            sample_index=payload.get("sample", 0),
        )


def complete_function(
    task: CompletionTask, client: ModelClient, max_tokens: int = DEFAULT_MAX_TOKENS
) -> Attempt:
    """First completion attempt; the verdict is attached by the caller."""
    prompt = build_completion_prompt(task)
    reply = client.complete(prompt, max_tokens)
    return Attempt(
        stage="completion",
        prompt=prompt,
        completion=reply.text,
        body=extract_code_block(reply.text),
        prompt_tokens=reply.prompt_tokens,
        completion_tokens=reply.completion_tokens,
    )


def build_repair_prompt(
    strategy: RepairStrategy,
    task: CompletionTask,
    attempt: Attempt,
    snippets: Sequence[RetrievedSnippet],
    client: ModelClient | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> tuple[str, ModelReply | None, str]:
    """Render the strategy's repair prompt.

    self_debug makes one extra model call for the line-by-line explanation
    and embeds the reply; that reply and its prompt are returned so the
    caller can account for the extra usage.
    """
    if attempt.verdict is None:
        raise ValueError("repair needs a verified attempt")
    fields = {
        "comment": task.record.comment,
        "signature": task.record.signature,
        "completion": attempt.body,
        "snippets_section": _snippets_section(snippets),
    }
    if strategy.uses_executor_feedback:
        fields["feedback"] = feedback_block(attempt.verdict)
    if strategy.kind == "self_debug":
        if client is None:
            raise ValueError("self_debug needs a model client for the explanation")
        explain_prompt = load_template("self_debug_explain.v1").format(
            comment=task.record.comment,
            signature=task.record.signature,
            completion=attempt.body,
        )
        explanation = client.complete(explain_prompt, max_tokens)
        fields["explanation"] = explanation.text
        prompt = load_template("self_debug.v1").format(**fields)
        return prompt, explanation, explain_prompt
    prompt = load_template(f"{strategy.kind}.v1").format(**fields)
    return prompt, None, ""


def _verify(task: CompletionTask, body: str, backend) -> ExecutionVerdict:
    try:
        completed_source = substitute_function(task.oracle_source, task.record, body)
    except (MalformedSourceError, MalformedRecordError) as exc:
        return ExecutionVerdict(
            status=STATUS_COMPILE_ERROR,
            diagnostics=(Diagnostic("Other", f"body cannot be spliced: {exc}"),),
            backend="splice",
        )
    return differential_verify(task.oracle_source, completed_source, task.record, backend)


def _retrieve_for_repair(
    config: RetrievalConfig,
    verdict: ExecutionVerdict,
    completed_body: str,
    context: ContextWindow,
    provider: EmbeddingProvider | None,
) -> list[RetrievedSnippet]:
    queries = queries_for_method(config.method, verdict, completed_body)
    lines = context.text.splitlines()
    if not queries or not lines:
        return []
    if config.method == "lcs":
        return lcs_retrieve_multi(queries, lines, config)
    return retrieve(queries[0], lines, config, provider)


def run_rar(
    task: CompletionTask,
    client: ModelClient,
    backend,
    strategy: RepairStrategy,
    retriever_cfg: RetrievalConfig | None = None,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    provider: EmbeddingProvider | None = None,
    sample_index: int = 0,
) -> RepairSession:
    """Retrieval-augmented repair for one task.

    max_rounds=0 is the no-repair baseline and issues prompts byte-identical
    to plain completion. Retrieval reruns every round from the latest
    verdict; it is skipped entirely when retriever_cfg is None. An
    executor_unavailable verdict aborts the session with that status.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    attempt = complete_function(task, client, max_tokens)
    verdict = _verify(task, attempt.body, backend)
    attempts = [attempt.with_verdict(verdict)]
    rounds = 0
    while (
        verdict.status not in (STATUS_PASS, STATUS_EXECUTOR_UNAVAILABLE)
        and rounds < max_rounds
    ):
        snippets: list[RetrievedSnippet] = []
        if retriever_cfg is not None:
            snippets = _retrieve_for_repair(
                retriever_cfg, verdict, attempts[-1].body, task.context, provider
            )
        prompt, explanation, explain_prompt = build_repair_prompt(
            strategy, task, attempts[-1], snippets, client=client, max_tokens=max_tokens
        )
        reply = client.complete(prompt, max_tokens)
        body = extract_code_block(reply.text)
        verdict = _verify(task, body, backend)
        attempts.append(
            Attempt(
                stage="repair",
                prompt=prompt,
                completion=reply.text,
                body=body,
                prompt_tokens=reply.prompt_tokens,
                completion_tokens=reply.completion_tokens,
                verdict=verdict,
                snippets=tuple(snippets),
                explanation_prompt=explain_prompt,
                explanation=explanation.text if explanation else "",
                explanation_prompt_tokens=explanation.prompt_tokens if explanation else 0,
                explanation_completion_tokens=(
                    explanation.completion_tokens if explanation else 0
                ),
            )
        )
        rounds += 1
    return RepairSession(
        task_id=task.task_id,
        strategy=strategy.kind,
        max_rounds=max_rounds,
        attempts=tuple(attempts),
        sample_index=sample_index,
    )
