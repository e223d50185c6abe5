"""Prompt assembly: system prompt plus a user prompt of ordered, typed sections.

The rendered text is a fixed template (see docs/prompt-template.md) so that
identical inputs always give byte-identical prompts.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

from .errors import SelfReference, ZeroBaseline
from .hints import Hint
from .plan import PlanStats
from .store import ExecutionRecord, RecordStore, SimilarityMetric

SYSTEM_PROMPT = (
    "You are a database expert performing a query optimization task. "
    "You answer with plan hints written in pg_hint_plan syntax: scan clauses such as SeqScan(t), "
    "join clauses such as HashJoin(t mk), and one Leading clause giving the join order as a "
    "parenthesized binary tree."
)

QUERY_PREAMBLE = "Generate a plan hint for the following query."

REGULATIONS = (
    "1. Produce a hint that makes the query faster than every plan shown above.",
    "2. Do not copy the execution engine's default plan or a hint already produced for this query.",
    "3. Reply with a single hint in valid pg_hint_plan syntax that uses exactly the query's table aliases.",
)


def _fmt_number(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else f"{value:.4f}"


def format_gain(eta: float) -> str:
    text = f"gain: {eta * 100:.2f}%"
    return text + " (worse than baseline)" if eta < 0 else text


@dataclass(frozen=True)
class Reference:
    sql_id: str
    sql: str
    hint: Hint
    latency_ms: float

    @classmethod
    def from_record(cls, rec: ExecutionRecord) -> Reference:
        return cls(rec.sql_id, rec.sql, rec.plan, rec.execution_time_ms)


@dataclass(frozen=True)
class ReferencesSection:
    items: tuple[Reference, ...]
    title = "References"

    def render(self) -> str:
        lines = [f"## {self.title}"]
        for i, ref in enumerate(self.items, start=1):
            lines += [f"Reference {i}:", f"SQL: {ref.sql.strip()}", f"Hint: {ref.hint}",
                      f"Latency: {ref.latency_ms:.2f} ms"]
        return "\n".join(lines)


@dataclass(frozen=True)
class StatsSection:
    stats: PlanStats
    title = "Stats"

    def render(self) -> str:
        lines = [f"## {self.title}", "Table cardinalities:"]
        cards = self.stats.table_cardinalities
        lines += [f"{a}: {_fmt_number(c)}" for a, c in cards.items()] or ["(none)"]
        lines.append("Filter selectivities:")
        sels = self.stats.filter_selectivities
        lines += [f"{a}: {float(s):.4f}" for a, s in sels.items()] or ["(none)"]
        return "\n".join(lines)


@dataclass(frozen=True)
class BestSoFarSection:
    hint: Hint
    gain: float
    title = "BestSoFar"

    def render(self) -> str:
        return "\n".join([f"## {self.title}", f"Hint: {self.hint}", format_gain(self.gain)])


@dataclass(frozen=True)
class RegulationsSection:
    text: str = "\n".join(REGULATIONS)
    title = "Regulations"

    def render(self) -> str:
        return f"## {self.title}\n{self.text}"


Section = ReferencesSection | StatsSection | BestSoFarSection | RegulationsSection
_ORDER = (ReferencesSection, StatsSection, BestSoFarSection, RegulationsSection)


@dataclass(frozen=True)
class PromptBundle:
    """System prompt, query and sections.  ``sql_id`` and ``iteration`` are metadata only."""

    sql: str
    sections: tuple[Section, ...]
    system_prompt: str = SYSTEM_PROMPT
    sql_id: str = ""
    iteration: int | None = None
    preamble: str = field(default=QUERY_PREAMBLE)

    def __post_init__(self) -> None:
        ranks = [_ORDER.index(type(s)) for s in self.sections]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ValueError("sections must be unique and ordered References, Stats, BestSoFar, Regulations")

    def section(self, kind: type) -> Section | None:
        return next((s for s in self.sections if isinstance(s, kind)), None)

    @property
    def section_names(self) -> list[str]:
        return [s.title for s in self.sections]

    @property
    def user_prompt(self) -> str:
        blocks = [f"{self.preamble}\n## Query\n{self.sql.strip()}"]
        blocks += [s.render() for s in self.sections]
        return "\n\n".join(blocks) + "\n"

    @property
    def rendered(self) -> str:
        return f"{self.system_prompt}\n\n{self.user_prompt}"


def compute_gain(t_o: float, t_star: float) -> float:
    """eta = (t_o - t*) / t_o; negative when the best plan is slower than the baseline."""
    if t_o <= 0:
        raise ZeroBaseline(f"baseline latency must be > 0, got {t_o}")
    return (t_o - t_star) / t_o


def build_prompt(
    q: tuple[str, str],
    refs: Sequence[ExecutionRecord | Reference],
    stats: PlanStats,
    best: tuple[Hint, float] | None = None,
    iteration: int | None = None,
    regulations: str | None = None,
) -> PromptBundle:
    sql_id, sql = q
    items = tuple(r if isinstance(r, Reference) else Reference.from_record(r) for r in refs)
    for ref in items:
        if ref.sql_id == sql_id:
            raise SelfReference(f"reference list contains the query itself ({sql_id!r})")
    sections: list[Section] = []
    if items:
        sections.append(ReferencesSection(items))
    sections.append(StatsSection(stats))
    if best is not None:
        sections.append(BestSoFarSection(best[0], float(best[1])))
    sections.append(RegulationsSection() if regulations is None else RegulationsSection(regulations))
    return PromptBundle(sql, tuple(sections), sql_id=sql_id, iteration=iteration)


def best_so_far(store: RecordStore, sql_id: str) -> tuple[Hint, float]:
    """Current best hint for ``sql_id`` and its gain over the stored baseline."""
    t_o = store.baseline_record(sql_id).execution_time_ms
    best = store.best(sql_id)
    return best.plan, compute_gain(t_o, best.execution_time_ms)


def evolve_prompt(
    previous_outcome: tuple[Hint, float] | None,
    store: RecordStore,
    q: tuple[str, str],
    iteration: int,
    stats: PlanStats | None = None,
    k: int = 3,
    metric: SimilarityMetric | str = SimilarityMetric.COSINE,
) -> PromptBundle:
    """Record the last outcome, then rebuild the prompt with fresh references and the best-so-far gain."""
    sql_id, sql = q
    store.baseline_record(sql_id)  # MissingBaseline before Initialization
    if previous_outcome is not None:
        hint, latency = previous_outcome
        store.record_outcome(sql_id, sql, iteration, hint, latency)
    refs = store.retrieve_references(sql, sql_id, k, metric)
    return build_prompt(q, refs, stats or PlanStats(), best_so_far(store, sql_id), iteration + 1)
