"""Execution-record store: embedding, similarity search and best-record tracking."""

from __future__ import annotations

import enum
import json
import os
import threading
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from .errors import DimensionMismatch, EmptyInput, MissingBaseline, SchemaViolation, ZeroVector
from .hints import Hint, HintValidationError, parse_hint
from .plan import ExecutionOutcome, PlanStats, plan_from_hint

DEFAULT_DIM = 384
JOURNAL_FIELDS = ("id", "iteration", "vector", "sql_id", "sql", "plan", "execution_time")

_TOKEN_PATTERN = r"[A-Za-z_][A-Za-z0-9_]*|\d+(?:\.\d+)?|[^\sA-Za-z0-9_]"


class SimilarityMetric(str, enum.Enum):
    COSINE = "cosine"
    INNER_PRODUCT = "inner_product"
    L2 = "l2"

    @classmethod
    def coerce(cls, value: SimilarityMetric | str) -> SimilarityMetric:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"ip": "inner_product", "dot": "inner_product", "euclidean": "l2"}
        return cls(aliases.get(key, key))

    @property
    def descending(self) -> bool:
        return self is not SimilarityMetric.L2


class ReplacementDecision(str, enum.Enum):
    INSERTED = "Inserted"
    REPLACED_BEST = "ReplacedBest"
    KEPT_EXISTING = "KeptExisting"


# ---------------------------------------------------------------------------
# embedding


class HashingEmbedder:
    """Feature hash of lowercased unigrams and bigrams, sublinear tf, unit L2 norm.

    Different seeds give different (but each deterministic) hash layouts.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        base = HashingVectorizer(lowercase=True, token_pattern=_TOKEN_PATTERN, ngram_range=(1, 2)).build_analyzer()

        def analyzer(text: str) -> list[str]:
            grams = base(text)
            return [f"{seed}\x1f{g}" for g in grams] if seed else grams

        self._vectorizer = HashingVectorizer(n_features=dim, analyzer=analyzer, alternate_sign=False, norm=None)

    def __call__(self, sql: str) -> np.ndarray:
        if not isinstance(sql, str) or not sql.strip():
            raise EmptyInput("cannot embed empty query text")
        row = self._vectorizer.transform([sql])
        counts = np.zeros(self.dim)
        counts[row.indices] = 1.0 + np.log(row.data)
        return counts / np.linalg.norm(counts)


_DEFAULT_EMBEDDERS: dict[tuple[int, int], HashingEmbedder] = {}


def embed(sql: str, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    key = (dim, seed)
    if key not in _DEFAULT_EMBEDDERS:
        _DEFAULT_EMBEDDERS[key] = HashingEmbedder(dim, seed)
    return _DEFAULT_EMBEDDERS[key](sql)


def similarity(u: np.ndarray, v: np.ndarray, metric: SimilarityMetric | str = SimilarityMetric.COSINE) -> float:
    metric = SimilarityMetric.coerce(metric)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector shapes differ: {u.shape} vs {v.shape}")
    if metric is SimilarityMetric.INNER_PRODUCT:
        return float(u @ v)
    if metric is SimilarityMetric.L2:
        return float(np.linalg.norm(u - v))
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _scores(matrix: np.ndarray, q: np.ndarray, metric: SimilarityMetric) -> np.ndarray:
    if metric is SimilarityMetric.INNER_PRODUCT:
        return matrix @ q
    if metric is SimilarityMetric.L2:
        return np.linalg.norm(matrix - q, axis=1)
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(matrix, axis=1)
    if qn == 0 or np.any(norms == 0):
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return np.clip(matrix @ q / (norms * qn), -1.0, 1.0)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ExecutionRecord:
    id: int
    iteration: int
    vector: np.ndarray
    sql_id: str
    sql: str
    plan: Hint
    execution_time_ms: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExecutionRecord):
            return NotImplemented
        return (
            (self.id, self.iteration, self.sql_id, self.sql, self.plan, self.execution_time_ms)
            == (other.id, other.iteration, other.sql_id, other.sql, other.plan, other.execution_time_ms)
            and np.array_equal(self.vector, other.vector)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "iteration": self.iteration,
            "vector": [float(x) for x in self.vector],
            "sql_id": self.sql_id,
            "sql": self.sql,
            "plan": str(self.plan),
            "execution_time": self.execution_time_ms,
        }

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> ExecutionRecord:
        where = f" (line {line})" if line is not None else ""
        if not isinstance(obj, dict):
            raise SchemaViolation(f"record{where} is not a JSON object")
        missing = [f for f in JOURNAL_FIELDS if f not in obj]
        if missing:
            raise SchemaViolation(f"record{where} is missing field(s): {', '.join(missing)}")
        try:
            plan = parse_hint(obj["plan"])
        except HintValidationError as exc:
            raise SchemaViolation(f"record{where} has an unparseable plan: {exc}") from exc
        try:
            return cls(
                id=int(obj["id"]),
                iteration=int(obj["iteration"]),
                vector=np.asarray(obj["vector"], dtype=float),
                sql_id=str(obj["sql_id"]),
                sql=str(obj["sql"]),
                plan=plan,
                execution_time_ms=float(obj["execution_time"]),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(f"record{where} has a malformed field: {exc}") from exc


class RecordStore:
    """In-memory record index with an optional append-only JSONL journal.

    Retrieval is an exact linear scan.  Superseded best records stay in the
    store; ``best(sql_id)`` always names the live one.
    """

    def __init__(
        self,
        dim: int = DEFAULT_DIM,
        embedder=None,
        journal_path: str | os.PathLike | None = None,
    ):
        self.dim = dim
        self.embedder = embedder if embedder is not None else HashingEmbedder(dim)
        self.journal_path = Path(journal_path) if journal_path is not None else None
        self._records: list[ExecutionRecord] = []
        self._buffer = np.empty((16, dim))
        self._best: dict[str, int] = {}
        self._baseline: dict[str, int] = {}
        self._lock = threading.RLock()

    # -- basic access --------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ExecutionRecord]:
        return iter(list(self._records))

    @property
    def records(self) -> list[ExecutionRecord]:
        return list(self._records)

    @property
    def sql_ids(self) -> list[str]:
        return list(self._best)

    def embed(self, sql: str) -> np.ndarray:
        vec = np.asarray(self.embedder(sql), dtype=float)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"embedder returned shape {vec.shape}, store dimension is {self.dim}")
        return vec

    def best(self, sql_id: str) -> ExecutionRecord | None:
        idx = self._best.get(sql_id)
        return None if idx is None else self._records[idx]

    def baseline_record(self, sql_id: str) -> ExecutionRecord:
        idx = self._baseline.get(sql_id)
        if idx is None:
            raise MissingBaseline(f"no iteration-0 record for {sql_id!r}")
        return self._records[idx]

    def get_baseline(self, sql_id: str) -> ExecutionOutcome:
        rec = self.baseline_record(sql_id)
        return ExecutionOutcome(plan_from_hint(rec.plan), rec.execution_time_ms, False, PlanStats())

    def has_baseline(self, sql_id: str) -> bool:
        return sql_id in self._baseline

    # -- writes --------------------------------------------------------------

    def _add(self, record: ExecutionRecord) -> ReplacementDecision:
        if record.vector.shape != (self.dim,):
            raise DimensionMismatch(f"vector length {record.vector.shape} != store dimension {self.dim}")
        idx = len(self._records)
        if idx == len(self._buffer):
            grown = np.empty((2 * len(self._buffer), self.dim))
            grown[:idx] = self._buffer
            self._buffer = grown
        self._buffer[idx] = record.vector
        self._records.append(record)
        if record.iteration == 0 and record.sql_id not in self._baseline:
            self._baseline[record.sql_id] = idx
        current = self._best.get(record.sql_id)
        if current is None:
            self._best[record.sql_id] = idx
            return ReplacementDecision.INSERTED
        if record.execution_time_ms < self._records[current].execution_time_ms:
            self._best[record.sql_id] = idx
            return ReplacementDecision.REPLACED_BEST
        return ReplacementDecision.KEPT_EXISTING

    def record_outcome(
        self,
        sql_id: str,
        sql: str,
        iteration: int,
        hint: Hint,
        latency_ms: float,
        vector: np.ndarray | None = None,
    ) -> ReplacementDecision:
        if latency_ms < 0:
            raise ValueError(f"latency must be >= 0, got {latency_ms}")
        if iteration < 0:
            raise ValueError(f"iteration must be >= 0, got {iteration}")
        vec = self.embed(sql) if vector is None else np.asarray(vector, dtype=float)
        with self._lock:
            record = ExecutionRecord(len(self._records), iteration, vec, sql_id, sql, hint, float(latency_ms))
            decision = self._add(record)
            if self.journal_path is not None:
                self.journal_path.parent.mkdir(parents=True, exist_ok=True)
                with self.journal_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_json()) + "\n")
        return decision

    # -- retrieval -----------------------------------------------------------

    def retrieve_references(
        self,
        q_sql: str | None,
        q_sql_id: str,
        k: int,
        metric: SimilarityMetric | str = SimilarityMetric.COSINE,
        query_vector: np.ndarray | None = None,
    ) -> list[ExecutionRecord]:
        """Top-k best-latency records of other queries, most similar first."""
        if k < 0:
            raise ValueError("k must be >= 0")
        metric = SimilarityMetric.coerce(metric)
        with self._lock:
            candidates = [idx for sid, idx in self._best.items() if sid != q_sql_id]
            if k == 0 or not candidates:
                return []
            q = self.embed(q_sql) if query_vector is None else np.asarray(query_vector, dtype=float)
            if q.shape != (self.dim,):
                raise DimensionMismatch(f"query vector shape {q.shape} != ({self.dim},)")
            ids = np.asarray(candidates)
            scores = _scores(self._buffer[ids], q, metric)
            primary = -scores if metric.descending else scores
            order = np.lexsort((ids, primary))
            return [self._records[int(ids[i])] for i in order[:k]]

    # -- persistence ---------------------------------------------------------

    def dump(self, path: str | os.PathLike) -> int:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for rec in self._records:
                fh.write(json.dumps(rec.to_json()) + "\n")
        return len(self._records)

    @classmethod
    def load(cls, path: str | os.PathLike, dim: int | None = None, embedder=None, journal: bool = False) -> RecordStore:
        """Rebuild a store by replaying a journal in file order."""
        records = list(read_journal(path))
        if dim is None:
            dim = len(records[0].vector) if records else DEFAULT_DIM
        store = cls(dim=dim, embedder=embedder)
        for rec in records:
            store._add(rec)
        if journal:
            store.journal_path = Path(path)
        return store


def read_journal(path: str | os.PathLike) -> Iterable[ExecutionRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            yield ExecutionRecord.from_json(obj, line=lineno)
