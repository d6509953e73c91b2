"""Snippet retrieval over the context window.

Sparse methods (longest-common-substring, BM25, TF-IDF, Jaccard) work on a
shared tokenizer; dense retrieval delegates embedding to a provider behind a
small JSON-over-HTTP contract. Every method returns at most max_snippets
results sorted by score descending, line index ascending.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from .corpus import tokenize_terms

METHODS = ("lcs", "bm25", "tfidf", "jaccard", "dense")

# A single-character match carries no signal; shorter fragments are noise.
MIN_LCS_LENGTH = 2

QUERY_IDENTIFIER = "identifier-query"
QUERY_LINE = "line-query"


class RetrievalUnavailableError(RuntimeError):
    """Raised when a retrieval dependency (embedding provider) fails."""


@dataclass(frozen=True)
class RetrievalConfig:
    method: str = "lcs"
    window_lines: int = 1
    step_lines: int = 1
    max_snippets: int = 2
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown retrieval method {self.method!r}")
        if self.window_lines < 1 or self.step_lines < 1:
            raise ValueError("window_lines and step_lines must be >= 1")
        if self.max_snippets < 1:
            raise ValueError("max_snippets must be >= 1")
        if self.bm25_k1 < 0 or not 0 <= self.bm25_b <= 1:
            raise ValueError("bm25_k1 must be >= 0 and bm25_b within [0, 1]")


@dataclass(frozen=True)
class Query:
    """What to search for: an identifier or a whole faulty line."""

    kind: str
    text: str

    def __post_init__(self) -> None:
        if self.kind not in (QUERY_IDENTIFIER, QUERY_LINE):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if not self.text:
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class RetrievedSnippet:
    """One scored context window; line_index is 0-based into the context."""

    line_index: int
    text: str
    score: float
    matched_fragment: str | None = None

    def to_json(self) -> dict:
        return {
            "line_index": self.line_index,
            "text": self.text,
            "score": self.score,
            "matched_fragment": self.matched_fragment,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RetrievedSnippet":
        return cls(
            line_index=payload["line_index"],
            text=payload["text"],
            score=payload["score"],
            matched_fragment=payload.get("matched_fragment"),
        )


@runtime_checkable
class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> list[float]: ...


def sliding_windows(
    context_lines: Sequence[str], config: RetrievalConfig
) -> list[tuple[int, str]]:
    """(start_line_index, window_text) pairs over the context lines."""
    windows: list[tuple[int, str]] = []
    n = len(context_lines)
    start = 0
    while start < n:
        chunk = context_lines[start : start + config.window_lines]
        windows.append((start, "\n".join(chunk)))
        start += config.step_lines
    return windows


def _ranked(
    scored: list[RetrievedSnippet], max_snippets: int
) -> list[RetrievedSnippet]:
    scored.sort(key=lambda s: (-s.score, s.line_index))
    return scored[:max_snippets]


def lcs_retrieve(
    query: Query, context_lines: Sequence[str], config: RetrievalConfig
) -> list[RetrievedSnippet]:
    """Longest-common-substring retrieval.

    Try query substrings from longest to shortest; the first length with at
    least one matching context line defines the match set. Ties rank by line
    index. Matches below MIN_LCS_LENGTH characters are discarded.
    """
    q = query.text
    for length in range(len(q), MIN_LCS_LENGTH - 1, -1):
        fragments = [q[j : j + length] for j in range(len(q) - length + 1)]
        hits: list[RetrievedSnippet] = []
        for idx, line in enumerate(context_lines):
            for frag in fragments:
                if frag in line:
                    hits.append(
                        RetrievedSnippet(
                            line_index=idx,
                            text=line,
                            score=float(length),
                            matched_fragment=frag,
                        )
                    )
                    break
        if hits:
            return _ranked(hits, config.max_snippets)
    return []


def lcs_retrieve_multi(
    queries: Sequence[Query],
    context_lines: Sequence[str],
    config: RetrievalConfig,
) -> list[RetrievedSnippet]:
    """Run lcs_retrieve per query and merge, deduplicating by line index.

    A line keeps its best score across queries; the merged list is re-ranked
    and capped like a single-query result.
    """
    best: dict[int, RetrievedSnippet] = {}
    for query in queries:
        for snippet in lcs_retrieve(query, context_lines, config):
            prior = best.get(snippet.line_index)
            if prior is None or snippet.score > prior.score:
                best[snippet.line_index] = snippet
    return _ranked(list(best.values()), config.max_snippets)


def bm25_retrieve(
    query: Query, windows: Sequence[tuple[int, str]], config: RetrievalConfig
) -> list[RetrievedSnippet]:
    """Okapi BM25 over the sliding windows.

    IDF uses ln(1 + (N - df + 0.5) / (df + 0.5)), which keeps weights
    non-negative even for terms present in most windows. Windows scoring
    zero are never returned.
    """
    docs = [(idx, tokenize_terms(text), text) for idx, text in windows]
    n_docs = len(docs)
    if n_docs == 0:
        return []
    avgdl = sum(len(tokens) for _, tokens, _ in docs) / n_docs
    query_terms = tokenize_terms(query.text)
    df = Counter()
    for _, tokens, _ in docs:
        for term in set(tokens):
            df[term] += 1
    idf = {
        term: max(0.0, math.log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5)))
        for term in set(query_terms)
    }
    k1, b = config.bm25_k1, config.bm25_b
    hits: list[RetrievedSnippet] = []
    for idx, tokens, text in docs:
        counts = Counter(tokens)
        dl = len(tokens)
        norm = 1.0 - b + b * (dl / avgdl) if avgdl > 0 else 1.0
        score = 0.0
        for term in query_terms:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            score += idf[term] * tf * (k1 + 1.0) / (tf + k1 * norm)
        if score > 0.0:
            hits.append(RetrievedSnippet(line_index=idx, text=text, score=score))
    return _ranked(hits, config.max_snippets)


def _tfidf_vector(tokens: Sequence[str], idf: dict[str, float]) -> dict[str, float]:
    counts = Counter(tokens)
    return {term: counts[term] * idf.get(term, 0.0) for term in counts}


def _cosine(a: dict[str, float], b: dict[str, float]) -> float:
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    dot = sum(v * b.get(t, 0.0) for t, v in a.items())
    return dot / (norm_a * norm_b)


def tfidf_retrieve(
    query: Query, windows: Sequence[tuple[int, str]], config: RetrievalConfig
) -> list[RetrievedSnippet]:
    """Cosine similarity of raw-count TF * ln(N / df) vectors.

    Terms never seen in any window take df = 1. An all-zero query vector
    yields an empty result; zero-scoring windows are never returned.
    """
    docs = [(idx, tokenize_terms(text), text) for idx, text in windows]
    n_docs = len(docs)
    if n_docs == 0:
        return []
    df = Counter()
    for _, tokens, _ in docs:
        for term in set(tokens):
            df[term] += 1
    query_terms = tokenize_terms(query.text)
    vocab = set(df) | set(query_terms)
    idf = {term: math.log(n_docs / max(1, df[term])) for term in vocab}
    q_vec = _tfidf_vector(query_terms, idf)
    if all(v == 0.0 for v in q_vec.values()):
        return []
    hits: list[RetrievedSnippet] = []
    for idx, tokens, text in docs:
        score = _cosine(q_vec, _tfidf_vector(tokens, idf))
        if score > 0.0:
            hits.append(RetrievedSnippet(line_index=idx, text=text, score=score))
    return _ranked(hits, config.max_snippets)


def jaccard_retrieve(
    query: Query, windows: Sequence[tuple[int, str]], config: RetrievalConfig
) -> list[RetrievedSnippet]:
    """Token-set Jaccard similarity; zero-scoring windows are never returned."""
    q_set = set(tokenize_terms(query.text))
    hits: list[RetrievedSnippet] = []
    for idx, text in windows:
        w_set = set(tokenize_terms(text))
        union = q_set | w_set
        score = len(q_set & w_set) / len(union) if union else 0.0
        if score > 0.0:
            hits.append(RetrievedSnippet(line_index=idx, text=text, score=score))
    return _ranked(hits, config.max_snippets)


def _vec_cosine(a: Sequence[float], b: Sequence[float]) -> float:
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)


def dense_retrieve(
    query: Query,
    windows: Sequence[tuple[int, str]],
    provider: EmbeddingProvider,
    config: RetrievalConfig,
) -> list[RetrievedSnippet]:
    """Cosine similarity over provider embeddings; zero vectors score 0."""
    if not windows:
        return []
    try:
        q_vec = provider.embed(query.text)
        w_vecs = [provider.embed(text) for _, text in windows]
    except Exception as exc:
        raise RetrievalUnavailableError(f"embedding provider failed: {exc}") from exc
    hits = [
        RetrievedSnippet(line_index=idx, text=text, score=_vec_cosine(q_vec, vec))
        for (idx, text), vec in zip(windows, w_vecs)
    ]
    return _ranked(hits, config.max_snippets)


def retrieve(
    query: Query,
    context_lines: Sequence[str],
    config: RetrievalConfig,
    provider: EmbeddingProvider | None = None,
) -> list[RetrievedSnippet]:
    """Dispatch to the configured method, windowing the context as needed."""
    if config.method == "lcs":
        return lcs_retrieve(query, context_lines, config)
    windows = sliding_windows(context_lines, config)
    if config.method == "bm25":
        return bm25_retrieve(query, windows, config)
    if config.method == "tfidf":
        return tfidf_retrieve(query, windows, config)
    if config.method == "jaccard":
        return jaccard_retrieve(query, windows, config)
    if config.method == "dense":
        if provider is None:
            raise RetrievalUnavailableError("dense retrieval needs an embedding provider")
        return dense_retrieve(query, windows, provider, config)
    raise ValueError(f"unknown retrieval method {config.method!r}")


@dataclass(frozen=True)
class HashEmbeddingProvider:
    """Deterministic local embeddings: tokens hashed into signed buckets.

    No model and no network; suitable for tests and offline runs.
    """

    dimension: int = 16

    def embed(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        for token in tokenize_terms(text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = digest[0] % self.dimension
            sign = 1.0 if digest[1] % 2 == 0 else -1.0
            vec[bucket] += sign
        return vec


class HttpEmbeddingProvider:
    """JSON-over-HTTP provider: POST {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(self, endpoint: str, dimension: int, timeout: float = 30.0) -> None:
        self.endpoint = endpoint
        self.dimension = dimension
        self.timeout = timeout

    def embed(self, text: str) -> list[float]:
        import requests

        try:
            response = requests.post(
                self.endpoint, json={"texts": [text]}, timeout=self.timeout
            )
            response.raise_for_status()
            vector = response.json()["vectors"][0]
        except Exception as exc:
            raise RetrievalUnavailableError(f"embedding endpoint failed: {exc}") from exc
        if len(vector) != self.dimension:
            raise RetrievalUnavailableError(
                f"expected dimension {self.dimension}, got {len(vector)}"
            )
        return [float(x) for x in vector]
