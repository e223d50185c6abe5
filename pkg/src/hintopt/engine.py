"""Execution engines: a deterministic simulator, a fixture replayer and a PostgreSQL seam."""

from __future__ import annotations

import abc
import itertools
import json
import math
import os
import threading
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ._seeding import derive_rng, derive_seed
from .errors import AdapterUnavailable, ConfigError, SpaceTooLarge, UnknownQuery
from .hints import JOIN_METHODS, Hint, HintMode, HintValidationError, JoinTree, parse_hint, tree_joins, tree_leaves
from .plan import (
    ExecutionOutcome,
    ExplainDocument,
    PlanStats,
    extract_hint,
    load_explain,
    plan_from_hint,
    simplify_plan,
    stats_from_plan,
)

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

# Scan methods the simulator models; other valid methods simply never match a preference.
SIM_SCAN_METHODS = ("SeqScan", "IndexScan", "BitmapScan")
DEFAULT_TIMEOUT_MS = 10_000.0
OPTIMUM_FACTOR = 0.4
MAX_ALIASES = 6
MAX_HINTS = 100_000


@dataclass(frozen=True)
class EngineRequest:
    sql_id: str
    sql: str = ""
    hint: Hint | None = None
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    attempt: int | None = None  # None: the engine counts attempts per (sql_id, hint)

    def __post_init__(self) -> None:
        if not self.timeout_ms > 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")


class Engine(abc.ABC):
    """What the pipeline needs from a database."""

    @abc.abstractmethod
    def execute(self, req: EngineRequest) -> ExecutionOutcome: ...

    @abc.abstractmethod
    def collect_stats(self, sql_id: str) -> PlanStats: ...

    @abc.abstractmethod
    def aliases(self, sql_id: str) -> list[str]: ...

    @abc.abstractmethod
    def default_plan_hint(self, sql_id: str) -> Hint: ...

    def sql(self, sql_id: str) -> str:
        raise UnknownQuery(sql_id)


# ---------------------------------------------------------------------------
# join-tree combinatorics


def count_trees(n: int) -> int:
    """Ordered binary join trees over n distinct aliases: n! * Catalan(n - 1)."""
    if n < 1:
        return 0
    return math.factorial(n) * math.comb(2 * (n - 1), n - 1) // n


def enumerate_trees(aliases: Sequence[str]) -> list[JoinTree]:
    aliases = tuple(aliases)
    if len(aliases) == 1:
        return [aliases[0]]
    out: list[JoinTree] = []
    idx = range(len(aliases))
    for size in range(1, len(aliases)):
        for left_idx in itertools.combinations(idx, size):
            left = tuple(aliases[i] for i in left_idx)
            right = tuple(a for i, a in enumerate(aliases) if i not in left_idx)
            for lt in enumerate_trees(left):
                for rt in enumerate_trees(right):
                    out.append((lt, rt))
    return out


def random_tree(aliases: Sequence[str], rng: np.random.Generator) -> JoinTree:
    aliases = list(aliases)
    if len(aliases) == 1:
        return aliases[0]
    order = [aliases[i] for i in rng.permutation(len(aliases))]
    cut = int(rng.integers(1, len(order)))
    return (random_tree(order[:cut], rng), random_tree(order[cut:], rng))


def _clusters(tree: JoinTree) -> set[tuple[frozenset, frozenset]]:
    return {(frozenset(tree_leaves(n[0])), frozenset(tree_leaves(n[1]))) for n in tree_joins(tree)}


def tree_similarity(tree: JoinTree, target: JoinTree) -> float:
    """1.0 iff the trees are identical; mixes oriented-subtree overlap and pairwise leaf order."""
    leaves = tree_leaves(target)
    n = len(leaves)
    if n < 2:
        return 1.0
    overlap = len(_clusters(tree) & _clusters(target)) / (n - 1)
    pos = {a: i for i, a in enumerate(tree_leaves(tree))}
    pairs = list(itertools.combinations(leaves, 2))
    agree = sum(pos[a] < pos[b] for a, b in pairs) / len(pairs)
    return 0.5 * overlap + 0.5 * agree


# ---------------------------------------------------------------------------
# simulated workload


@dataclass
class SimQuery:
    """One simulated query.

    Without ``latency_table`` the latency of a hint is ``default_latency_ms *
    f`` with ``f = 0.4 + lam * (1 - score)``, where ``score`` in [0, 1] measures
    agreement with ``optimal_hint`` and ``lam`` makes ``f(default) == 1``.
    With a table, listed hints take their listed value and everything else the
    default latency.
    """

    sql_id: str
    sql: str
    aliases: tuple[str, ...]
    default_latency_ms: float
    default_hint: Hint | None = None
    optimal_hint: Hint | None = None
    method_seed: int = 0
    cardinalities: dict[str, float] = field(default_factory=dict)
    selectivities: dict[str, float] = field(default_factory=dict)
    latency_table: dict[str, float] | None = None

    def __post_init__(self) -> None:
        self.aliases = tuple(self.aliases)
        if len(set(self.aliases)) != len(self.aliases) or not self.aliases:
            raise ConfigError(f"{self.sql_id}: aliases must be non-empty and distinct")
        if not self.default_latency_ms > 0:
            raise ConfigError(f"{self.sql_id}: default latency must be > 0")
        if self.default_hint is None:
            tree: JoinTree = self.aliases[0]
            for a in self.aliases[1:]:
                tree = (tree, a)
            self.default_hint = self._with_methods(tree if len(self.aliases) > 1 else None, preferred=False)
        if self.default_hint.mode is HintMode.JOIN_ORDER:
            self.default_hint = self._with_methods(self.default_hint.leading, preferred=True)
        for name, h in (("default", self.default_hint), ("optimal", self.optimal_hint)):
            if h is not None and sorted(h.aliases) != sorted(self.aliases):
                raise ConfigError(f"{self.sql_id}: {name} hint aliases {h.aliases} != {list(self.aliases)}")
        if self.latency_table is None:
            if self.optimal_hint is None:
                raise ConfigError(f"{self.sql_id}: needs an optimal hint or a latency table")
            self._default_score = self.score(self.default_hint)
            if self._default_score >= 1.0:
                raise ConfigError(f"{self.sql_id}: default plan must differ from the optimal hint")
            self._lam = (1.0 - OPTIMUM_FACTOR) / (1.0 - self._default_score)

    # preferred physical methods --------------------------------------------

    def preferred_scan(self, alias: str) -> str:
        if self.optimal_hint is not None and self.optimal_hint.mode is HintMode.FULL_PLAN:
            return self.optimal_hint.scan_methods[alias]
        return SIM_SCAN_METHODS[derive_seed(self.method_seed, "scan", alias) % len(SIM_SCAN_METHODS)]

    def preferred_join(self, subset: Iterable[str]) -> str:
        key = frozenset(subset)
        if self.optimal_hint is not None and self.optimal_hint.mode is HintMode.FULL_PLAN:
            method = self.optimal_hint.join_methods.get(key)
            if method is not None:
                return method
        return JOIN_METHODS[derive_seed(self.method_seed, "join", *sorted(key)) % len(JOIN_METHODS)]

    def _with_methods(self, tree: JoinTree | None, preferred: bool) -> Hint:
        if preferred:
            scans = {a: self.preferred_scan(a) for a in self.aliases}
            joins = {frozenset(tree_leaves(n)): self.preferred_join(tree_leaves(n)) for n in tree_joins(tree)} if tree else {}
        else:
            scans = {a: "SeqScan" for a in self.aliases}
            joins = {frozenset(tree_leaves(n)): "HashJoin" for n in tree_joins(tree)} if tree else {}
        return Hint.full_plan(tree, scans, joins)

    # latency model ---------------------------------------------------------

    def is_valid(self, h: Hint | None) -> bool:
        return h is not None and sorted(h.aliases) == sorted(self.aliases)

    def effective_hint(self, h: Hint | None) -> Hint:
        """Full-plan hint of the plan the engine actually runs for ``h``."""
        if not self.is_valid(h):
            return self.default_hint
        if h.mode is HintMode.JOIN_ORDER:
            return self._with_methods(h.leading, preferred=True)
        return h

    def score(self, h: Hint) -> float:
        full = self.effective_hint(h) if self.is_valid(h) else h
        target = self.optimal_hint
        t_score = 1.0 if full.leading is None else tree_similarity(full.leading, target.leading if target.leading is not None else target.aliases[0])
        agree = sum(m == self.preferred_scan(a) for a, m in full.scan_methods.items())
        agree += sum(m == self.preferred_join(s) for s, m in full.join_methods.items())
        m_score = agree / (2 * len(self.aliases) - 1)
        return 0.7 * t_score + 0.3 * m_score

    def true_latency(self, h: Hint | None) -> float:
        if not self.is_valid(h):
            return self.default_latency_ms
        if self.latency_table is not None:
            for key in (str(h), str(h.project())):
                if key in self.latency_table:
                    return float(self.latency_table[key])
            return self.default_latency_ms
        factor = OPTIMUM_FACTOR + self._lam * (1.0 - self.score(h))
        return self.default_latency_ms * factor

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "sql_id": self.sql_id,
            "sql": self.sql,
            "aliases": list(self.aliases),
            "default_latency_ms": self.default_latency_ms,
            "default_hint": str(self.default_hint),
            "method_seed": self.method_seed,
            "cardinalities": dict(self.cardinalities),
            "selectivities": dict(self.selectivities),
        }
        if self.optimal_hint is not None:
            out["optimal_hint"] = str(self.optimal_hint)
        if self.latency_table is not None:
            out["latency_table"] = dict(self.latency_table)
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> SimQuery:
        try:
            aliases = list(obj["aliases"])
            sql_id = str(obj["sql_id"])

            def hint(key: str) -> Hint | None:
                return parse_hint(obj[key], aliases) if obj.get(key) else None

            return cls(
                sql_id=sql_id,
                sql=str(obj.get("sql", "")),
                aliases=tuple(aliases),
                default_latency_ms=float(obj["default_latency_ms"]),
                default_hint=hint("default_hint"),
                optimal_hint=hint("optimal_hint"),
                method_seed=int(obj.get("method_seed", 0)),
                cardinalities={k: float(v) for k, v in obj.get("cardinalities", {}).items()},
                selectivities={k: float(v) for k, v in obj.get("selectivities", {}).items()},
                latency_table={k: float(v) for k, v in obj["latency_table"].items()} if "latency_table" in obj else None,
            )
        except KeyError as exc:
            raise ConfigError(f"workload query is missing field {exc}") from exc
        except HintValidationError as exc:
            raise ConfigError(f"workload query {obj.get('sql_id')!r}: {exc}") from exc


@dataclass
class SimWorkload:
    queries: dict[str, SimQuery]
    noise: float = 0.0
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    name: str = "workload"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not self.timeout_ms > 0:
            raise ConfigError("timeout_ms must be > 0")

    @property
    def sql_ids(self) -> list[str]:
        return list(self.queries)

    def items(self) -> list[tuple[str, str]]:
        return [(q.sql_id, q.sql) for q in self.queries.values()]

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "noise": self.noise,
            "timeout_ms": self.timeout_ms,
            "seed": self.seed,
            "queries": [q.to_json() for q in self.queries.values()],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> SimWorkload:
        queries = [SimQuery.from_json(q) for q in obj.get("queries", [])]
        ids = [q.sql_id for q in queries]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate sql_id in workload")
        return cls(
            queries={q.sql_id: q for q in queries},
            noise=float(obj.get("noise", 0.0)),
            timeout_ms=float(obj.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
            name=str(obj.get("name", "workload")),
            seed=int(obj.get("seed", 0)),
        )


def load_workload(path: str | os.PathLike) -> SimWorkload:
    path = Path(path)
    raw = path.read_bytes()
    try:
        obj = tomllib.loads(raw.decode()) if path.suffix.lower() == ".toml" else json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse workload ({exc})") from exc
    return SimWorkload.from_json(obj)


def save_workload(workload: SimWorkload, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(workload.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")


# table aliases borrowed from the IMDB schema so generated SQL reads naturally
_TABLE_POOL = (
    ("t", "title"), ("mk", "movie_keyword"), ("k", "keyword"), ("ci", "cast_info"),
    ("n", "name"), ("mc", "movie_companies"), ("cn", "company_name"), ("it", "info_type"),
    ("mi", "movie_info"), ("kt", "kind_type"), ("chn", "char_name"), ("rt", "role_type"),
)


def generate_workload(
    n_queries: int = 10,
    min_aliases: int = 3,
    max_aliases: int = 5,
    seed: int = 0,
    noise: float = 0.0,
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    name: str = "synthetic",
    max_default_similarity: float = 0.5,
) -> SimWorkload:
    """Random workload with a planted optimal full-plan hint per query."""
    if not 2 <= min_aliases <= max_aliases <= len(_TABLE_POOL):
        raise ConfigError(f"alias range must satisfy 2 <= min <= max <= {len(_TABLE_POOL)}")
    if n_queries < 1:
        raise ConfigError("n_queries must be >= 1")
    rng = np.random.default_rng(seed)
    queries: dict[str, SimQuery] = {}
    for qi in range(1, n_queries + 1):
        n = int(rng.integers(min_aliases, max_aliases + 1))
        picks = sorted(rng.choice(len(_TABLE_POOL), size=n, replace=False))
        tables = [_TABLE_POOL[i] for i in picks]
        aliases = [a for a, _ in tables]
        optimum = random_tree(aliases, rng)
        candidates = [random_tree(aliases, rng) for _ in range(64)]
        far = [c for c in candidates if tree_similarity(c, optimum) <= max_default_similarity]
        default_tree = far[0] if far else min(candidates, key=lambda c: tree_similarity(c, optimum))
        opt_scans = {a: SIM_SCAN_METHODS[int(rng.integers(len(SIM_SCAN_METHODS)))] for a in aliases}
        opt_joins = {frozenset(tree_leaves(j)): JOIN_METHODS[int(rng.integers(len(JOIN_METHODS)))] for j in tree_joins(optimum)}
        optimal_hint = Hint.full_plan(optimum, opt_scans, opt_joins)
        method_seed = int(rng.integers(2**31))
        sql = _synth_sql(tables, rng)
        cards = {a: float(int(10 ** rng.uniform(2, 6))) for a in aliases}
        sels = {a: round(float(rng.uniform(0.01, 1.0)), 4) for a in aliases}
        proto = SimQuery(f"sim_q{qi}", sql, tuple(aliases), 1.0, optimal_hint=optimal_hint,
                         default_hint=optimal_hint, method_seed=method_seed, latency_table={})
        # default methods: the preferred one half the time, otherwise a random alternative
        def pick(preferred: str, options: tuple[str, ...]) -> str:
            if rng.random() < 0.5:
                return preferred
            others = [m for m in options if m != preferred]
            return others[int(rng.integers(len(others)))]

        d_scans = {a: pick(proto.preferred_scan(a), SIM_SCAN_METHODS) for a in aliases}
        d_joins = {frozenset(tree_leaves(j)): pick(proto.preferred_join(tree_leaves(j)), JOIN_METHODS)
                   for j in tree_joins(default_tree)}
        default_latency = round(float(10 ** rng.uniform(math.log10(50), math.log10(5000))), 3)
        queries[f"sim_q{qi}"] = SimQuery(
            sql_id=f"sim_q{qi}",
            sql=sql,
            aliases=tuple(aliases),
            default_latency_ms=default_latency,
            default_hint=Hint.full_plan(default_tree, d_scans, d_joins),
            optimal_hint=optimal_hint,
            method_seed=method_seed,
            cardinalities=cards,
            selectivities=sels,
        )
    return SimWorkload(queries, noise=noise, timeout_ms=timeout_ms, name=name, seed=seed)


def _synth_sql(tables: list[tuple[str, str]], rng: np.random.Generator) -> str:
    froms = ", ".join(f"{table} AS {alias}" for alias, table in tables)
    preds = [f"{a}.id = {b}.{tables[i][1]}_id" for i, ((a, _), (b, _)) in enumerate(zip(tables, tables[1:]))]
    for alias, _ in tables:
        if rng.random() < 0.5:
            preds.append(f"{alias}.note LIKE '%{int(rng.integers(1000))}%'")
    where = " AND ".join(preds)
    return f"SELECT MIN({tables[0][0]}.id) FROM {froms} WHERE {where};"


# ---------------------------------------------------------------------------
# engines


def _timed(latency: float, timeout_ms: float) -> tuple[float, bool]:
    if latency >= timeout_ms:
        return float(timeout_ms), True
    return float(latency), False


class SimEngine(Engine):
    """Deterministic engine over a :class:`SimWorkload`.

    Jitter for attempt ``a`` of hint ``h`` on ``q`` is drawn from a stream
    seeded by ``(workload seed, q, h, a)``, so concurrent callers cannot
    perturb each other.
    """

    def __init__(self, workload: SimWorkload):
        self.workload = workload
        self._attempts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @property
    def sql_ids(self) -> list[str]:
        return self.workload.sql_ids

    def query(self, sql_id: str) -> SimQuery:
        try:
            return self.workload.queries[sql_id]
        except KeyError:
            raise UnknownQuery(f"unknown query {sql_id!r}") from None

    def sql(self, sql_id: str) -> str:
        return self.query(sql_id).sql

    def aliases(self, sql_id: str) -> list[str]:
        return list(self.query(sql_id).aliases)

    def default_plan_hint(self, sql_id: str) -> Hint:
        return self.query(sql_id).default_hint

    def true_latency(self, sql_id: str, hint: Hint | None) -> float:
        return self.query(sql_id).true_latency(hint)

    def execute(self, req: EngineRequest) -> ExecutionOutcome:
        q = self.query(req.sql_id)
        latency = q.true_latency(req.hint)
        if self.workload.noise > 0:
            key = str(req.hint) if q.is_valid(req.hint) else ""
            attempt = req.attempt
            if attempt is None:
                with self._lock:
                    attempt = self._attempts.get((req.sql_id, key), 0)
                    self._attempts[(req.sql_id, key)] = attempt + 1
            jitter = derive_rng(self.workload.seed, req.sql_id, key, attempt).uniform(-1.0, 1.0)
            latency *= 1.0 + self.workload.noise * jitter
        latency, timed_out = _timed(latency, req.timeout_ms)
        plan = plan_from_hint(q.effective_hint(req.hint), q.cardinalities)
        return ExecutionOutcome(plan, latency, timed_out, self.collect_stats(req.sql_id))

    def collect_stats(self, sql_id: str) -> PlanStats:
        q = self.query(sql_id)
        return PlanStats(dict(q.cardinalities), dict(q.selectivities))

    def enumerate_hint_space(
        self,
        sql_id: str,
        mode: HintMode | str = HintMode.JOIN_ORDER,
        max_aliases: int = MAX_ALIASES,
        max_hints: int = MAX_HINTS,
    ) -> list[Hint]:
        return enumerate_hint_space(self.aliases(sql_id), mode, max_aliases, max_hints)

    def oracle_best(self, sql_id: str, mode: HintMode | str = HintMode.JOIN_ORDER) -> tuple[Hint, float]:
        """Noise-free minimum-latency hint (first in enumeration order on ties)."""
        space = self.enumerate_hint_space(sql_id, mode)
        q = self.query(sql_id)
        latencies = [q.true_latency(h) for h in space]
        best = int(np.argmin(latencies))
        return space[best], latencies[best]


def hint_space_size(n_aliases: int, mode: HintMode | str) -> int:
    trees = count_trees(n_aliases)
    if HintMode.coerce(mode) is HintMode.JOIN_ORDER:
        return trees if n_aliases > 1 else 1
    return trees * len(JOIN_METHODS) ** (n_aliases - 1) * len(SIM_SCAN_METHODS) ** n_aliases


def enumerate_hint_space(
    aliases: Sequence[str],
    mode: HintMode | str = HintMode.JOIN_ORDER,
    max_aliases: int = MAX_ALIASES,
    max_hints: int = MAX_HINTS,
) -> list[Hint]:
    """Every canonical hint over ``aliases``.

    Full-plan spaces range over the simulator's scan methods.  A single alias
    has no join order, so its space holds scan-only hints.
    """
    mode = HintMode.coerce(mode)
    n = len(aliases)
    if n > max_aliases:
        raise SpaceTooLarge(f"{n} aliases exceed the enumeration bound of {max_aliases}")
    size = hint_space_size(n, mode)
    if size > max_hints:
        raise SpaceTooLarge(f"hint space of {size} exceeds the bound of {max_hints}")
    if n == 1:
        return [Hint.full_plan(None, {aliases[0]: m}) for m in SIM_SCAN_METHODS] if mode is HintMode.FULL_PLAN \
            else [Hint.full_plan(None, {aliases[0]: SIM_SCAN_METHODS[0]})]
    trees = enumerate_trees(aliases)
    if mode is HintMode.JOIN_ORDER:
        return [Hint.join_order(t) for t in trees]
    out = []
    for tree in trees:
        subsets = [frozenset(tree_leaves(j)) for j in tree_joins(tree)]
        for jm in itertools.product(JOIN_METHODS, repeat=len(subsets)):
            joins = dict(zip(subsets, jm))
            for sm in itertools.product(SIM_SCAN_METHODS, repeat=n):
                out.append(Hint.full_plan(tree, dict(zip(aliases, sm)), joins))
    return out


class ReplayEngine(Engine):
    """Answers from recorded EXPLAIN ANALYZE documents.

    A recording captures only the default plan, so every request (with or
    without a hint) replays it.
    """

    def __init__(self, recordings: Mapping[str, tuple[str, ExplainDocument]]):
        self._recordings = dict(recordings)

    @classmethod
    def from_directory(cls, path: str | os.PathLike) -> ReplayEngine:
        path = Path(path)
        recordings = {}
        for doc_path in sorted(path.glob("*.json")):
            sql_path = doc_path.with_suffix(".sql")
            sql = sql_path.read_text(encoding="utf-8") if sql_path.exists() else ""
            recordings[doc_path.stem] = (sql, load_explain(doc_path.read_text(encoding="utf-8")))
        return cls(recordings)

    @property
    def sql_ids(self) -> list[str]:
        return list(self._recordings)

    def _get(self, sql_id: str) -> tuple[str, ExplainDocument]:
        try:
            return self._recordings[sql_id]
        except KeyError:
            raise UnknownQuery(f"no recording for {sql_id!r}") from None

    def sql(self, sql_id: str) -> str:
        return self._get(sql_id)[0]

    def aliases(self, sql_id: str) -> list[str]:
        return self.default_plan_hint(sql_id).aliases

    def default_plan_hint(self, sql_id: str) -> Hint:
        return extract_hint(self._get(sql_id)[1].plan, HintMode.FULL_PLAN)

    def execute(self, req: EngineRequest) -> ExecutionOutcome:
        _, doc = self._get(req.sql_id)
        latency, timed_out = _timed(doc.execution_time_ms or 0.0, req.timeout_ms)
        return ExecutionOutcome(doc.plan, latency, timed_out, stats_from_plan(doc.plan))

    def collect_stats(self, sql_id: str) -> PlanStats:
        return stats_from_plan(self._get(sql_id)[1].plan)


class PostgresEngine(Engine):
    """Live PostgreSQL with the pg_hint_plan extension (needs ``psycopg``)."""

    def __init__(self, dsn: str, queries: Mapping[str, str]):
        try:
            import psycopg  # noqa: F401
        except ImportError as exc:
            raise AdapterUnavailable("PostgreSQL adapter needs the 'psycopg' package") from exc
        self._psycopg = psycopg
        self.dsn = dsn
        self.queries = dict(queries)

    def sql(self, sql_id: str) -> str:
        try:
            return self.queries[sql_id]
        except KeyError:
            raise UnknownQuery(f"unknown query {sql_id!r}") from None

    def _explain(self, sql_id: str, hint: Hint | None, analyze: bool, timeout_ms: float) -> ExplainDocument:
        prefix = f"/*+ {hint} */ " if hint is not None else ""
        options = "ANALYZE, FORMAT JSON" if analyze else "FORMAT JSON"
        try:
            with self._psycopg.connect(self.dsn) as conn, conn.cursor() as cur:
                cur.execute(f"SET statement_timeout = {int(timeout_ms)}")
                cur.execute(f"{prefix}EXPLAIN ({options}) {self.sql(sql_id)}")
                return load_explain(cur.fetchone()[0])
        except self._psycopg.OperationalError as exc:
            raise AdapterUnavailable(f"database unreachable: {exc}") from exc

    def execute(self, req: EngineRequest) -> ExecutionOutcome:
        try:
            doc = self._explain(req.sql_id, req.hint, True, req.timeout_ms)
        except self._psycopg.errors.QueryCanceled:
            doc = self._explain(req.sql_id, req.hint, False, req.timeout_ms)
            return ExecutionOutcome(doc.plan, float(req.timeout_ms), True, stats_from_plan(doc.plan))
        latency, timed_out = _timed(doc.execution_time_ms or 0.0, req.timeout_ms)
        return ExecutionOutcome(doc.plan, latency, timed_out, stats_from_plan(doc.plan))

    def collect_stats(self, sql_id: str) -> PlanStats:
        return stats_from_plan(self._explain(sql_id, None, False, DEFAULT_TIMEOUT_MS).plan)

    def default_plan_hint(self, sql_id: str) -> Hint:
        return extract_hint(simplify_plan(self._explain(sql_id, None, False, DEFAULT_TIMEOUT_MS).plan))

    def aliases(self, sql_id: str) -> list[str]:
        return self.default_plan_hint(sql_id).aliases
