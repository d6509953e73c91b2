"""Run orchestration: corpus builds, benchmark runs, reports, verification.

Runs persist to an output directory as JSONL: sessions.jsonl (every model
attempt) and outcomes.jsonl (one committed row per task, written in task
order). The outcome row is the commit marker; on resume, session lines for
tasks without an outcome row are dropped and those tasks re-run, so a killed
and resumed run produces byte-identical outcomes. Worker threads never
write: results are drained in submission order from the pool.
"""

from __future__ import annotations

import concurrent.futures
import datetime as _dt
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .context import build_context, get_counter
from .corpus import (
    DEFAULT_FILTER_CONFIG,
    FilterConfig,
    FilterReport,
    FunctionRecord,
    SourceFile,
    build_corpus,
    read_task_file,
    write_task_file,
)
from .executor import (
    STATUS_EXECUTOR_UNAVAILABLE,
    ScriptedDifferentialBackend,
    SolcCompileBackend,
    SubprocessFuzzBackend,
)
from .metrics import (
    CostModel,
    GPT_4O_MINI_PRICES,
    TaskOutcome,
    build_report,
    format_report_table,
)
from .repair import (
    CompletionTask,
    HttpModelClient,
    ModelClientError,
    RateLimiter,
    RepairSession,
    RepairStrategy,
    ScriptedModelClient,
    run_rar,
)
from .retrieval import HashEmbeddingProvider, HttpEmbeddingProvider, RetrievalConfig

MANIFEST_SCHEMA = "manifest@1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFRA = 3

log = logging.getLogger("solrepair")


class ConfigError(ValueError):
    """Invalid run configuration or unusable input files (exit code 2)."""


@dataclass
class RunConfig:
    """Everything a benchmark run needs; serialized into the manifest."""

    task_file: str
    out_dir: str
    source_root: str = ""
    context_budget: int = 2048
    counter: str = "bytes4"
    strategy: str = "self_edit"
    max_rounds: int = 1
    max_tokens: int = 1024
    n_samples: int = 1
    workers: int = 1
    seed: int = 0
    retrieval: dict | None = None
    executor: str = "mock"  # "mock" | "solc" | "fuzz"
    mock_executor: str | None = None
    solc_path: str = "solc"
    fuzz_command: list[str] = field(default_factory=list)
    executor_timeout: float = 60.0
    mock_client: str | None = None
    endpoint: str | None = None
    model: str = "scripted"
    api_key_env: str = "MODEL_API_KEY"
    rate_limit_per_minute: int = 0
    k_values: list[int] = field(default_factory=lambda: [1])
    prompt_usd_per_million: float = GPT_4O_MINI_PRICES.prompt_usd_per_million
    completion_usd_per_million: float = GPT_4O_MINI_PRICES.completion_usd_per_million

    def validate(self) -> None:
        if not Path(self.task_file).is_file():
            raise ConfigError(f"task file not found: {self.task_file}")
        if self.context_budget < 0:
            raise ConfigError("context_budget must be non-negative")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be non-negative")
        if self.n_samples < 1 or self.workers < 1:
            raise ConfigError("n_samples and workers must be >= 1")
        if self.mock_client is None and self.endpoint is None:
            raise ConfigError("need --mock-client FILE or an HTTP endpoint")
        if self.mock_client is not None and not Path(self.mock_client).is_file():
            raise ConfigError(f"mock client fixture not found: {self.mock_client}")
        if self.mock_executor is not None and not Path(self.mock_executor).is_file():
            raise ConfigError(f"mock executor fixture not found: {self.mock_executor}")
        if self.executor not in ("mock", "solc", "fuzz"):
            raise ConfigError(f"unknown executor kind {self.executor!r}")
        if self.executor == "fuzz" and not self.fuzz_command:
            raise ConfigError("fuzz executor needs a command")
        try:
            get_counter(self.counter)
            RepairStrategy(self.strategy)
            if self.retrieval is not None:
                RetrievalConfig(**self.retrieval)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def cost_model(self) -> CostModel:
        return CostModel(self.prompt_usd_per_million, self.completion_usd_per_million)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "RunConfig":
        return cls(**payload)


@dataclass
class RunManifest:
    """Summary of one run: config snapshot, versions, completion status."""

    config: dict
    started_at: str
    finished_at: str
    harness_version: str
    backend_name: str
    backend_version: str
    client_name: str
    tasks_total: int
    tasks_completed: int
    incomplete_task_ids: list[str]
    status: str  # "complete" | "partial"

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["schema"] = MANIFEST_SCHEMA
        return payload


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _dump_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n"


def build_client(config: RunConfig, rate_limiter: RateLimiter | None = None):
    if config.mock_client is not None:
        try:
            return ScriptedModelClient(
                config.mock_client, counter=get_counter(config.counter)
            )
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad client fixture {config.mock_client}: {exc}") from exc
    return HttpModelClient(
        endpoint=config.endpoint,
        model=config.model,
        api_key_env=config.api_key_env,
        rate_limiter=rate_limiter,
        counter=get_counter(config.counter),
    )


def build_backend(config: RunConfig):
    if config.executor == "solc":
        return SolcCompileBackend(config.solc_path, timeout=config.executor_timeout)
    if config.executor == "fuzz":
        return SubprocessFuzzBackend(config.fuzz_command, timeout=config.executor_timeout)
    try:
        return ScriptedDifferentialBackend(config.mock_executor, seed=config.seed)
    except ValueError as exc:
        raise ConfigError(f"bad executor fixture {config.mock_executor}: {exc}") from exc


def build_provider(config: RunConfig):
    if config.retrieval is None or config.retrieval.get("method") != "dense":
        return None
    endpoint = config.retrieval.get("endpoint")
    dimension = config.retrieval.get("dimension", 16)
    if endpoint:
        return HttpEmbeddingProvider(endpoint, dimension)
    return HashEmbeddingProvider(dimension)


def load_tasks(config: RunConfig) -> list[CompletionTask]:
    """Materialize tasks: read sources, build context windows."""
    counter = get_counter(config.counter)
    try:
        rows = read_task_file(config.task_file)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read task file {config.task_file}: {exc}") from exc
    sources: dict[str, SourceFile] = {}
    tasks: list[CompletionTask] = []
    for task_id, record in rows:
        path = record.source_id
        if path not in sources:
            full = Path(config.source_root) / path if config.source_root else Path(path)
            if not full.is_file():
                raise ConfigError(f"source file not found: {full}")
            sources[path] = SourceFile.from_text(path, full.read_text(encoding="utf-8"))
        file = sources[path]
        window = build_context(file, record, config.context_budget, counter)
        tasks.append(
            CompletionTask(
                task_id=task_id,
                record=record,
                context=window,
                oracle_source=file.text,
            )
        )
    return tasks


def cmd_build(
    source_dir: str | Path,
    tasks_out: str | Path,
    stats_out: str | Path | None = None,
    filter_config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> FilterReport:
    """Build a task file from a directory tree of .sol sources.

    Source paths are recorded relative to source_dir, so a later run can
    resolve them with source_root pointing at the same directory.
    """
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise ConfigError(f"source directory not found: {source_dir}")
    paths = sorted(source_dir.rglob("*.sol"))
    files = [
        SourceFile.from_text(
            str(p.relative_to(source_dir)), p.read_text(encoding="utf-8")
        )
        for p in paths
    ]
    records, report = build_corpus(files, filter_config)
    write_task_file(records, tasks_out)
    if stats_out is not None:
        Path(stats_out).write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    log.info(
        "built %d tasks from %d files (%d extracted, %d dupes removed)",
        report.retained,
        len(files),
        report.total_extracted,
        report.dedup_removed,
    )
    return report


def _read_completed(outcomes_path: Path) -> list[str]:
    """Task ids with committed outcome rows, in file order."""
    done: list[str] = []
    if not outcomes_path.is_file():
        return done
    for line in outcomes_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            done.append(json.loads(line)["task_id"])
        except (json.JSONDecodeError, KeyError):
            break  # torn trailing write; everything after is uncommitted
    return done


def _truncate_orphan_sessions(sessions_path: Path, done: set[str]) -> None:
    """Drop session lines whose task never committed an outcome row."""
    if not sessions_path.is_file():
        return
    kept: list[str] = []
    for line in sessions_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            continue
        if row.get("task_id") in done:
            kept.append(line)
    sessions_path.write_text(
        "".join(k + "\n" for k in kept), encoding="utf-8"
    )


def run_task(
    task: CompletionTask,
    config: RunConfig,
    client,
    backend,
    provider,
) -> tuple[TaskOutcome, list[RepairSession]]:
    """All samples for one task; pure with respect to shared state."""
    strategy = RepairStrategy(config.strategy)
    retriever_cfg = (
        RetrievalConfig(
            **{k: v for k, v in config.retrieval.items() if k not in ("endpoint", "dimension")}
        )
        if config.retrieval is not None
        else None
    )
    sessions = [
        run_rar(
            task,
            client,
            backend,
            strategy,
            retriever_cfg=retriever_cfg,
            max_rounds=config.max_rounds,
            max_tokens=config.max_tokens,
            provider=provider,
            sample_index=i,
        )
        for i in range(config.n_samples)
    ]
    from .metrics import outcome_from_sessions

    outcome = outcome_from_sessions(task.task_id, sessions, config.context_budget)
    return outcome, sessions


def cmd_run(config: RunConfig) -> tuple[RunManifest, int]:
    """Execute a run with resume support; returns (manifest, exit_code)."""
    config.validate()
    tasks = load_tasks(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcomes_path = out / "outcomes.jsonl"
    sessions_path = out / "sessions.jsonl"
    manifest_path = out / "manifest.json"

    started = _now()
    done_list = _read_completed(outcomes_path)
    task_ids = [t.task_id for t in tasks]
    known = set(task_ids)
    unknown = [d for d in done_list if d not in known]
    if unknown:
        raise ConfigError(
            f"{outcomes_path} holds outcomes for foreign tasks (e.g. {unknown[0]}); "
            "wrong output directory?"
        )
    done = set(done_list)
    if done:
        # Rewrite outcomes to exactly the committed rows (drops a torn tail).
        rows = outcomes_path.read_text(encoding="utf-8").splitlines()
        outcomes_path.write_text(
            "".join(r + "\n" for r in rows[: len(done_list)]), encoding="utf-8"
        )
    _truncate_orphan_sessions(sessions_path, done)
    pending = [t for t in tasks if t.task_id not in done]
    log.info("run: %d tasks total, %d already done, %d pending", len(tasks), len(done), len(pending))

    rate_limiter = (
        RateLimiter(config.rate_limit_per_minute) if config.rate_limit_per_minute else None
    )
    client = build_client(config, rate_limiter)
    backend = build_backend(config)
    provider = build_provider(config)

    failures: list[tuple[str, str]] = []
    unavailable_seen = False

    def worker(task: CompletionTask):
        try:
            return run_task(task, config, client, backend, provider)
        except ModelClientError as exc:
            return (task.task_id, str(exc))

    with open(outcomes_path, "a", encoding="utf-8") as out_fh, open(
        sessions_path, "a", encoding="utf-8"
    ) as sess_fh:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
            # map() yields in submission order, so files stay in task order
            # regardless of worker count.
            for result in pool.map(worker, pending):
                if isinstance(result[0], str):
                    task_id, message = result
                    failures.append((task_id, message))
                    log.error("task %s failed: %s", task_id, message)
                    continue
                outcome, sessions = result
                for session in sessions:
                    sess_fh.write(_dump_row(session.to_json()))
                sess_fh.flush()
                out_fh.write(_dump_row(outcome.to_json()))
                out_fh.flush()
                if outcome.unavailable:
                    unavailable_seen = True

    completed = _read_completed(outcomes_path)
    incomplete = [t for t in task_ids if t not in set(completed)]
    manifest = RunManifest(
        config=config.to_json(),
        started_at=started,
        finished_at=_now(),
        harness_version=__version__,
        backend_name=getattr(backend, "name", "?"),
        backend_version=str(getattr(backend, "version", "")),
        client_name=getattr(client, "name", "?"),
        tasks_total=len(tasks),
        tasks_completed=len(completed),
        incomplete_task_ids=incomplete,
        status="complete" if not incomplete else "partial",
    )
    manifest_path.write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    exit_code = EXIT_OK
    if incomplete or unavailable_seen:
        exit_code = EXIT_INFRA
    return manifest, exit_code


def read_outcomes(path: str | Path) -> list[TaskOutcome]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(TaskOutcome.from_json(json.loads(line)))
    return rows


def read_sessions(path: str | Path) -> list[RepairSession]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(RepairSession.from_json(json.loads(line)))
    return rows


def cmd_report(
    outcome_paths: Sequence[str | Path],
    session_paths: Sequence[str | Path] = (),
    k_values: Sequence[int] = (1,),
    cost_model: CostModel = GPT_4O_MINI_PRICES,
    out_json: str | Path | None = None,
) -> dict:
    """Aggregate persisted logs into a report; pure given the input files."""
    outcomes: list[TaskOutcome] = []
    for path in outcome_paths:
        outcomes.extend(read_outcomes(path))
    if not outcomes:
        raise ConfigError("no outcomes to report on")
    sessions: list[RepairSession] = []
    for path in session_paths:
        sessions.extend(read_sessions(path))
    report = build_report(outcomes, sessions or None, k_values, cost_model)
    if out_json is not None:
        Path(out_json).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report


def cmd_verify(
    task_file: str | Path,
    completions_path: str | Path,
    config: RunConfig,
    out_path: str | Path | None = None,
) -> tuple[list[dict], int]:
    """Verify externally produced bodies against their oracles.

    Completions file: JSONL rows {"task_id": ..., "body": ...}.
    """
    backend = build_backend(config)
    tasks = {t.task_id: t for t in load_tasks(config)}
    results = []
    exit_code = EXIT_OK
    for line in Path(completions_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        task = tasks.get(row["task_id"])
        if task is None:
            raise ConfigError(f"unknown task id {row['task_id']!r}")
        from .repair import _verify

        verdict = _verify(task, row["body"], backend)
        if verdict.status == STATUS_EXECUTOR_UNAVAILABLE:
            exit_code = EXIT_INFRA
        results.append({"task_id": row["task_id"], "verdict": verdict.to_json()})
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in results:
                fh.write(_dump_row(row))
    return results, exit_code
