"""Supervised dataset of (prompt, reference hint) pairs built from executed queries."""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .engine import DEFAULT_TIMEOUT_MS, EngineRequest
from .errors import EmptyDataset, HintOptError, SchemaViolation
from .hints import HintMode, HintValidationError, parse_hint
from .plan import PlanStats, extract_hint, extract_tables, simplify_plan, stats_from_plan

ENTRY_FIELDS = ("sql_id", "prompt_text", "hint_text", "provenance")

SFT_ROLE_LINE = "You are a database query optimizer. Write a plan hint for the SQL query below."


@dataclass(frozen=True)
class SftDatasetEntry:
    sql_id: str
    prompt_text: str
    hint_text: str
    provenance: Mapping[str, str] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "sql_id": self.sql_id,
            "prompt_text": self.prompt_text,
            "hint_text": self.hint_text,
            "provenance": dict(self.provenance),
            "messages": [
                {"role": "user", "content": self.prompt_text},
                {"role": "assistant", "content": self.hint_text},
            ],
        }


@dataclass(frozen=True)
class BuildFailure:
    sql_id: str
    reason: str


def render_sft_prompt(sql: str, tables: list[str], stats: PlanStats) -> str:
    lines = [SFT_ROLE_LINE, "SQL:", sql.strip(), "Cardinalities:"]
    for alias in tables:
        card = stats.table_cardinalities.get(alias)
        if card is None:
            lines.append(f"{alias}: unknown")
        else:
            lines.append(f"{alias}: {int(card) if float(card).is_integer() else card}")
    return "\n".join(lines) + "\n"


def _default_clock() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def build_sft_dataset(
    engine,
    queries: Iterable[tuple[str, str]],
    mode: HintMode | str = HintMode.FULL_PLAN,
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    clock: Callable[[], str] = _default_clock,
) -> tuple[list[SftDatasetEntry], list[BuildFailure]]:
    """Execute each query hint-less and label it with the hint of the plan the engine chose.

    Per-query failures (including timeouts) are collected, not raised;
    ``EmptyDataset`` is raised only when nothing succeeds.
    """
    mode = HintMode.coerce(mode)
    entries: list[SftDatasetEntry] = []
    failures: list[BuildFailure] = []
    queries = list(queries)
    stamp = clock()
    for sql_id, sql in queries:
        try:
            outcome = engine.execute(EngineRequest(sql_id, sql, None, timeout_ms))
            if outcome.timed_out:
                failures.append(BuildFailure(sql_id, f"timed out at {outcome.latency_ms:g} ms"))
                continue
            plan = simplify_plan(outcome.plan)
            tables = extract_tables(plan)
            stats = outcome.stats if outcome.stats.table_cardinalities else stats_from_plan(plan)
            hint = extract_hint(plan, mode)
        except HintOptError as exc:
            failures.append(BuildFailure(sql_id, f"{type(exc).__name__}: {exc}"))
            continue
        entries.append(SftDatasetEntry(
            sql_id=sql_id,
            prompt_text=render_sft_prompt(sql, tables, stats),
            hint_text=str(hint),
            provenance={"engine": type(engine).__name__, "timestamp": stamp},
        ))
    if not entries:
        raise EmptyDataset(f"no query produced an entry ({len(failures)} failed)")
    return entries, failures


def write_dataset(entries: Iterable[SftDatasetEntry], path: str | os.PathLike) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
            n += 1
    return n


def read_dataset(path: str | os.PathLike) -> list[SftDatasetEntry]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise SchemaViolation(f"line {lineno}: entry is not a JSON object")
            missing = [f for f in ENTRY_FIELDS if f not in obj]
            if missing:
                raise SchemaViolation(f"line {lineno}: missing field(s) {', '.join(missing)}")
            for key in ("sql_id", "prompt_text", "hint_text"):
                if not isinstance(obj[key], str):
                    raise SchemaViolation(f"line {lineno}: field {key!r} must be a string")
            if not isinstance(obj["provenance"], dict):
                raise SchemaViolation(f"line {lineno}: field 'provenance' must be an object")
            try:
                parse_hint(obj["hint_text"])
            except HintValidationError as exc:
                raise SchemaViolation(f"line {lineno}: hint_text does not parse ({exc})") from exc
            out.append(SftDatasetEntry(obj["sql_id"], obj["prompt_text"], obj["hint_text"],
                                       {str(k): str(v) for k, v in obj["provenance"].items()}))
    return out
