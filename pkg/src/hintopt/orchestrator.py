"""Online loop: Preparation, Initialization and Generation over iterations and episodes."""

from __future__ import annotations

import csv
import json
import logging
import os
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_queries, check_sql_ids
from .engine import DEFAULT_TIMEOUT_MS, EngineRequest, SimEngine, SimWorkload, generate_workload, load_workload
from .errors import ConfigError, HintOptError, InfeasiblePartition, RemoteTimeout, RemoteUnavailable
from .generators import DEFAULT_WEIGHTS, GeneratorSpec, generate, make_generator
from .hints import Hint, HintMode, HintValidationError, hint_equals_default
from .plan import extract_hint
from .prompts import PromptBundle, best_so_far, build_prompt
from .store import DEFAULT_DIM, RecordStore, ReplacementDecision, SimilarityMetric

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    workloads: dict[str, SimWorkload]
    iterations: int = 50
    k: int = 3
    metric: SimilarityMetric = SimilarityMetric.COSINE
    mode: HintMode = HintMode.JOIN_ORDER
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    seed: int = 0
    episodes: int | None = None
    episode_seed: int | None = None
    timeouts: dict[str, float] = field(default_factory=dict)
    parallel_queries: int = 1
    embedding_dim: int = DEFAULT_DIM

    def __post_init__(self) -> None:
        self.metric = SimilarityMetric.coerce(self.metric)
        self.mode = HintMode.coerce(self.mode)
        if not self.workloads:
            raise ConfigError("at least one workload is required")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.parallel_queries < 1:
            raise ConfigError("parallel_queries must be >= 1")
        if self.episodes is not None and not 1 <= self.episodes <= self.iterations:
            raise ConfigError("episodes must be between 1 and iterations")
        seen: dict[str, str] = {}
        for name, wl in self.workloads.items():
            for sid in wl.queries:
                if sid in seen:
                    raise ConfigError(f"sql_id {sid!r} appears in workloads {seen[sid]!r} and {name!r}")
                seen[sid] = name

    def timeout_for(self, workload: str) -> float:
        return float(self.timeouts.get(workload, self.workloads[workload].timeout_ms))

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any], base_dir: str | os.PathLike = ".", seed: int | None = None) -> RunConfig:
        base = Path(base_dir)
        run_seed = int(seed if seed is not None else obj.get("seed", 0))
        workloads: dict[str, SimWorkload] = {}
        for name, spec in (obj.get("workloads") or {}).items():
            if not isinstance(spec, Mapping):
                raise ConfigError(f"workload {name!r} must be a table")
            if "path" in spec:
                wl = load_workload(base / spec["path"])
            elif "generate" in spec:
                params = dict(spec["generate"])
                params.setdefault("seed", run_seed)
                params.setdefault("name", name)
                try:
                    wl = generate_workload(**params)
                except TypeError as exc:
                    raise ConfigError(f"workload {name!r}: {exc}") from exc
            else:
                raise ConfigError(f"workload {name!r} needs 'path' or 'generate'")
            workloads[name] = wl
        gen = dict(obj.get("generator") or {})
        gen.setdefault("seed", run_seed)
        gen.setdefault("mode", str(obj.get("mode", "join_order")))
        if "weights" in gen:
            gen["weights"] = {**{k: 0.0 for k in DEFAULT_WEIGHTS}, **gen["weights"]}
        try:
            gen_spec = GeneratorSpec(**gen)
        except TypeError as exc:
            raise ConfigError(f"generator: {exc}") from exc
        episodes = obj.get("episodes") or {}
        if not isinstance(episodes, Mapping):
            raise ConfigError("'episodes' must be a table with 'count' and optional 'seed'")
        try:
            return cls(
                workloads=workloads,
                iterations=int(obj.get("iterations", 50)),
                k=int(obj.get("k", 3)),
                metric=obj.get("metric", "cosine"),
                mode=obj.get("mode", "join_order"),
                generator=gen_spec,
                seed=run_seed,
                episodes=int(episodes["count"]) if "count" in episodes else None,
                episode_seed=int(episodes["seed"]) if "seed" in episodes else None,
                timeouts={str(k): float(v) for k, v in (obj.get("timeouts") or {}).items()},
                parallel_queries=int(obj.get("parallel_queries", 1)),
                embedding_dim=int(obj.get("embedding_dim", DEFAULT_DIM)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path: str | os.PathLike, seed: int | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
        path = Path(path)
        try:
            obj = tomllib.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        obj.update(overrides or {})
        return cls.from_dict(obj, path.parent, seed)


# ---------------------------------------------------------------------------
# logs


@dataclass
class QueryRow:
    iteration: int
    workload: str
    sql_id: str
    stage: str  # "initialization" or "generation"
    hint: str | None
    error: str | None
    latency_ms: float
    timed_out: bool
    replaced: bool
    eta: float
    best_latency_ms: float
    baseline_ms: float
    default_copy: bool


@dataclass
class IterationLog:
    iteration: int
    workload: str
    rows: list[QueryRow]
    total_latency_ms: float = 0.0
    baseline_total_ms: float = 0.0
    best_total_ms: float = 0.0
    ret: float = 1.0
    best_ret: float = 1.0
    hr: float | None = None

    def __post_init__(self) -> None:
        self.recompute()

    def recompute(self) -> None:
        rows = self.rows
        self.total_latency_ms = float(sum(r.latency_ms for r in rows))
        self.baseline_total_ms = float(sum(r.baseline_ms for r in rows))
        self.best_total_ms = float(sum(r.best_latency_ms for r in rows))
        if self.baseline_total_ms > 0:
            self.ret = self.total_latency_ms / self.baseline_total_ms
            self.best_ret = self.best_total_ms / self.baseline_total_ms
        gen = [r for r in rows if r.stage == "generation"]
        self.hr = (sum(r.error is not None or r.default_copy for r in gen) / len(gen)) if gen else None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def write_run_logs(logs: Sequence[IterationLog], out_dir: str | os.PathLike) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jsonl = out / "run_log.jsonl"
    with jsonl.open("w", encoding="utf-8") as fh:
        for entry in logs:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
    summary = out / "run_summary.csv"
    with summary.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "workload", "total_latency_ms", "baseline_total_ms", "ret", "best_ret", "hr"])
        for e in logs:
            writer.writerow([e.iteration, e.workload, repr(e.total_latency_ms), repr(e.baseline_total_ms),
                             repr(e.ret), repr(e.best_ret), "" if e.hr is None else repr(e.hr)])
    return jsonl, summary


def read_run_logs(path: str | os.PathLike) -> list[IterationLog]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                rows = [QueryRow(**r) for r in obj.pop("rows")]
                out.append(IterationLog(obj["iteration"], obj["workload"], rows))
    return out


# ---------------------------------------------------------------------------
# stages


def schedule_episodes(workloads: Sequence[str], episodes: int, total_iterations: int, seed: int) -> list[tuple[str, tuple[int, int]]]:
    """Random partition of iterations 1..total into ``episodes`` spans, each with a random workload."""
    if not workloads:
        raise InfeasiblePartition("no workloads to schedule")
    if not 1 <= episodes <= total_iterations:
        raise InfeasiblePartition(f"cannot split {total_iterations} iterations into {episodes} non-empty episodes")
    rng = np.random.default_rng(seed)
    cuts = sorted(int(c) for c in rng.choice(np.arange(2, total_iterations + 1), size=episodes - 1, replace=False))
    starts = [1] + cuts
    ends = [s - 1 for s in cuts] + [total_iterations]
    return [(workloads[int(rng.integers(len(workloads)))], (s, e)) for s, e in zip(starts, ends)]


def prepare(store: RecordStore, engine, seed_queries: Iterable[tuple[str, str]],
            mode: HintMode | str = HintMode.JOIN_ORDER, timeout_ms: float = DEFAULT_TIMEOUT_MS) -> int:
    """Execute seed queries hint-less and store them as iteration-0 records."""
    count = 0
    for sql_id, sql in seed_queries:
        try:
            outcome = engine.execute(EngineRequest(sql_id, sql, None, timeout_ms))
            store.record_outcome(sql_id, sql, 0, extract_hint(outcome.plan, mode), outcome.latency_ms)
            count += 1
        except HintOptError as exc:
            log.warning("preparation skipped %s: %s", sql_id, exc)
    return count


@dataclass
class _Pending:
    sql_id: str
    sql: str
    prompt: PromptBundle


class OnlineLoop:
    """Per-query stage logic shared by :func:`run` and :class:`SelfEvolvingOptimizer`."""

    def __init__(self, store: RecordStore, generator, k: int = 3,
                 metric: SimilarityMetric | str = SimilarityMetric.COSINE,
                 mode: HintMode | str = HintMode.JOIN_ORDER, parallel_queries: int = 1):
        self.store = store
        self.generator = generator
        self.k = k
        self.metric = SimilarityMetric.coerce(metric)
        self.mode = HintMode.coerce(mode)
        self.parallel_queries = parallel_queries
        self.generations: dict[str, int] = {}

    def _row(self, it, workload, sid, stage, hint, error, outcome, decision, default_copy) -> QueryRow:
        best_hint, eta = best_so_far(self.store, sid)
        return QueryRow(
            iteration=it, workload=workload, sql_id=sid, stage=stage,
            hint=None if hint is None else str(hint), error=error,
            latency_ms=float(outcome.latency_ms), timed_out=bool(outcome.timed_out),
            replaced=decision is not ReplacementDecision.KEPT_EXISTING, eta=eta,
            best_latency_ms=self.store.best(sid).execution_time_ms,
            baseline_ms=self.store.baseline_record(sid).execution_time_ms,
            default_copy=default_copy,
        )

    def initialize(self, engine, it: int, workload: str, sid: str, sql: str, timeout_ms: float) -> QueryRow:
        outcome = engine.execute(EngineRequest(sid, sql, None, timeout_ms))
        plan = extract_hint(outcome.plan, self.mode)
        decision = self.store.record_outcome(sid, sql, 0, plan, outcome.latency_ms)
        return self._row(it, workload, sid, "initialization", plan, None, outcome, decision, True)

    def build(self, engine, it: int, sid: str, sql: str) -> _Pending:
        stats = engine.collect_stats(sid)
        refs = self.store.retrieve_references(sql, sid, self.k, self.metric)
        best = best_so_far(self.store, sid) if self.generations.get(sid, 0) > 0 else None
        return _Pending(sid, sql, build_prompt((sid, sql), refs, stats, best, iteration=it))

    def attempt(self, engine, pending: _Pending, timeout_ms: float):
        aliases = engine.aliases(pending.sql_id)
        hint: Hint | None = None
        error: str | None = None
        try:
            hint = generate(self.generator, pending.prompt, aliases)
            if sorted(hint.aliases) != sorted(aliases):
                error, hint = "MissingAlias", None
        except HintValidationError as exc:
            error = exc.kind.value
        except (RemoteUnavailable, RemoteTimeout) as exc:
            error = type(exc).__name__
        outcome = engine.execute(EngineRequest(pending.sql_id, pending.sql, hint, timeout_ms))
        return hint, error, outcome

    def finish(self, engine, it: int, workload: str, pending: _Pending, hint, error, outcome) -> QueryRow:
        sid = pending.sql_id
        plan = hint if hint is not None else extract_hint(outcome.plan, self.mode)
        decision = self.store.record_outcome(sid, pending.sql, it, plan, outcome.latency_ms)
        self.generations[sid] = self.generations.get(sid, 0) + 1
        copy = hint is not None and hint_equals_default(hint, engine.default_plan_hint(sid))
        return self._row(it, workload, sid, "generation", hint, error, outcome, decision, copy)

    def iteration(self, engine, it: int, workload: str, queries: Sequence[tuple[str, str]], timeout_ms: float) -> IterationLog:
        rows: dict[str, QueryRow] = {}
        todo = []
        for sid, sql in queries:
            if not self.store.has_baseline(sid):
                rows[sid] = self.initialize(engine, it, workload, sid, sql, timeout_ms)
            elif self.parallel_queries == 1:
                pending = self.build(engine, it, sid, sql)
                rows[sid] = self.finish(engine, it, workload, pending, *self.attempt(engine, pending, timeout_ms))
            else:
                todo.append(self.build(engine, it, sid, sql))
        if todo:
            with ThreadPoolExecutor(self.parallel_queries) as pool:
                results = list(pool.map(lambda p: self.attempt(engine, p, timeout_ms), todo))
            for pending, result in zip(todo, results):
                rows[pending.sql_id] = self.finish(engine, it, workload, pending, *result)
        return IterationLog(it, workload, [rows[sid] for sid, _ in queries])


def run(config: RunConfig, store: RecordStore | None = None, engines: Mapping[str, Any] | None = None) -> list[IterationLog]:
    """Run the online loop; returns one log per iteration."""
    store = store if store is not None else RecordStore(dim=config.embedding_dim)
    engines = dict(engines) if engines is not None else {n: SimEngine(w) for n, w in config.workloads.items()}
    loop = OnlineLoop(store, make_generator(config.generator), config.k, config.metric, config.mode,
                      config.parallel_queries)
    names = list(config.workloads)
    if config.episodes is None:
        plan = [(None, (1, config.iterations))]
    else:
        seed = config.episode_seed if config.episode_seed is not None else config.seed
        plan = schedule_episodes(names, config.episodes, config.iterations, seed)
    logs: list[IterationLog] = []
    for workload, (start, end) in plan:
        active = names if workload is None else [workload]
        for it in range(start, end + 1):
            for name in active:
                logs.append(loop.iteration(engines[name], it, name, config.workloads[name].items(),
                                           config.timeout_for(name)))
    return logs


# ---------------------------------------------------------------------------
# estimator


class SelfEvolvingOptimizer(BaseEstimator):
    """Online hint search over one engine.

    ``fit`` takes ``(sql_id, sql)`` pairs and runs ``iterations`` rounds;
    ``predict`` returns the best stored hint per sql_id.
    """

    def __init__(self, engine=None, iterations: int = 50, k: int = 3, metric: str = "cosine",
                 mode: str = "join_order", generator: GeneratorSpec | None = None,
                 timeout_ms: float = DEFAULT_TIMEOUT_MS, parallel_queries: int = 1,
                 embedding_dim: int = DEFAULT_DIM, seed: int = 0):
        self.engine = engine
        self.iterations = iterations
        self.k = k
        self.metric = metric
        self.mode = mode
        self.generator = generator
        self.timeout_ms = timeout_ms
        self.parallel_queries = parallel_queries
        self.embedding_dim = embedding_dim
        self.seed = seed

    def fit(self, X, y=None, store: RecordStore | None = None):
        if self.engine is None:
            raise ValueError("SelfEvolvingOptimizer needs an engine")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        queries = check_queries(X)
        spec = self.generator or GeneratorSpec(kind="mutating", seed=self.seed, mode=str(HintMode.coerce(self.mode).value))
        self.store_ = store if store is not None else RecordStore(dim=self.embedding_dim)
        loop = OnlineLoop(self.store_, make_generator(spec), self.k, self.metric, self.mode, self.parallel_queries)
        self.logs_ = [loop.iteration(self.engine, it, "fit", queries, self.timeout_ms)
                      for it in range(1, self.iterations + 1)]
        return self

    def predict(self, X) -> list[Hint]:
        check_is_fitted(self, "store_")
        return [self.store_.best(sid).plan for sid in check_sql_ids(X)]
