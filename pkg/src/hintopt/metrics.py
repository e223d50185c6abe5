"""Evaluation metrics and reports over run logs."""

from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

from .errors import MismatchedQuerySets, ZeroBaselineTotal
from .hints import Hint, hint_equals_default

DEFAULT_QUANTILES = (50, 75, 90, 95, 99)

Latencies = Mapping[str, float] | Sequence[float]


def _align(baseline: Latencies, system: Latencies) -> list[tuple[float, float]]:
    if isinstance(baseline, Mapping) != isinstance(system, Mapping):
        raise MismatchedQuerySets("baseline and system must both be mappings or both be sequences")
    if isinstance(baseline, Mapping):
        if set(baseline) != set(system):
            diff = sorted(set(baseline) ^ set(system))
            raise MismatchedQuerySets(f"query sets differ: {diff[:5]}")
        return [(float(baseline[k]), float(system[k])) for k in baseline]
    if len(baseline) != len(system):
        raise MismatchedQuerySets(f"{len(baseline)} baseline vs {len(system)} system latencies")
    return [(float(b), float(s)) for b, s in zip(baseline, system)]


def _weighted_gain(pairs: list[tuple[float, float]]) -> float:
    total = sum(b for b, _ in pairs)
    if total <= 0:
        raise ZeroBaselineTotal("baseline total latency must be > 0")
    gain = 0.0
    for b, s in pairs:
        if b > 0:
            gain += (b / total) * ((b - s) / b)
    return gain


def overall_gain(baseline: Latencies, system: Latencies) -> float:
    """Baseline-time-weighted mean of per-query relative speedups."""
    return _weighted_gain(_align(baseline, system))


class FilteredGain(NamedTuple):
    value: float
    empty: bool  # True when no query was accelerated


def filtered_gain(baseline: Latencies, system: Latencies) -> FilteredGain:
    """Weighted gain over accelerated queries only; ``(0.0, True)`` when there are none."""
    faster = [(b, s) for b, s in _align(baseline, system) if s < b]
    if not faster:
        return FilteredGain(0.0, True)
    return FilteredGain(_weighted_gain(faster), False)


def ret(baseline: Latencies, system: Latencies) -> float:
    pairs = _align(baseline, system)
    total = sum(b for b, _ in pairs)
    if total <= 0:
        raise ZeroBaselineTotal("baseline total latency must be > 0")
    return sum(s for _, s in pairs) / total


def homogeneous_rate(entries: Iterable[Any]) -> float:
    """Share of generated hints that are invalid or reproduce the default plan.

    Entries are run-log rows (``stage``, ``error``, ``default_copy``) or
    ``(hint_or_None, default_plan_hint)`` pairs.  Initialization rows are
    ignored.
    """
    total = hits = 0
    for entry in entries:
        if isinstance(entry, tuple):
            hint, default = entry
            hit = not isinstance(hint, Hint) or hint_equals_default(hint, default)
        else:
            if getattr(entry, "stage", "generation") != "generation":
                continue
            hit = entry.error is not None or bool(entry.default_copy)
        total += 1
        hits += bool(hit)
    if total == 0:
        raise ValueError("homogeneous rate needs at least one generated hint")
    return hits / total


def percentile_table(latencies: Iterable[float], quantiles: Sequence[float] = DEFAULT_QUANTILES) -> dict[str, float]:
    """Nearest-rank percentiles: the value at rank ceil(p/100 * N) of the sorted data."""
    data = sorted(float(x) for x in latencies)
    if not data:
        raise ValueError("percentile table needs at least one latency")
    out = {}
    for p in quantiles:
        if not 0 <= p <= 100:
            raise ValueError(f"quantile {p} outside [0, 100]")
        rank = max(1, math.ceil(p / 100 * len(data)))
        out[f"p{p:g}"] = data[rank - 1]
    return out


@dataclass
class MetricsSummary:
    ret: float
    hr: float | None
    overall_gain: float
    filtered_gain: float
    filtered_empty: bool
    percentiles: dict[str, dict[str, float]] = field(default_factory=dict)

    @classmethod
    def compute(cls, baseline: Mapping[str, float], system: Mapping[str, float], hr: float | None,
                quantiles: Sequence[float] = DEFAULT_QUANTILES) -> MetricsSummary:
        fg = filtered_gain(baseline, system)
        return cls(
            ret=ret(baseline, system),
            hr=hr,
            overall_gain=overall_gain(baseline, system),
            filtered_gain=fg.value,
            filtered_empty=fg.empty,
            percentiles={
                "baseline": percentile_table(baseline.values(), quantiles),
                "system": percentile_table(system.values(), quantiles),
            },
        )


def _per_query(logs) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
    baseline: dict[str, float] = {}
    final: dict[str, float] = {}
    best: dict[str, float] = {}
    for entry in logs:
        for row in entry.rows:
            baseline[row.sql_id] = row.baseline_ms
            final[row.sql_id] = row.latency_ms
            best[row.sql_id] = row.best_latency_ms
    return baseline, final, best


def _hr_or_none(rows) -> float | None:
    try:
        return homogeneous_rate(rows)
    except ValueError:
        return None


def report(logs: Sequence, quantiles: Sequence[float] = DEFAULT_QUANTILES) -> dict[str, Any]:
    """Both aggregation variants: best latency over all iterations, and the last executed latency."""
    if not logs:
        raise ValueError("no iteration logs to report on")
    baseline, final, best = _per_query(logs)
    all_rows = [r for entry in logs for r in entry.rows]
    last_it = logs[-1].iteration
    last_rows = [r for entry in logs if entry.iteration == last_it for r in entry.rows]
    return {
        "iterations": len({e.iteration for e in logs}),
        "queries": len(baseline),
        "best_over_iterations": asdict(MetricsSummary.compute(baseline, best, _hr_or_none(all_rows), quantiles)),
        "final_iteration": asdict(MetricsSummary.compute(baseline, final, _hr_or_none(last_rows), quantiles)),
    }


def write_report(logs: Sequence, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report(logs), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path = out / "report_iterations.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "workload", "ret", "best_ret", "hr", "overall_gain", "best_overall_gain"])
        for e in logs:
            writer.writerow([e.iteration, e.workload, repr(e.ret), repr(e.best_ret),
                             "" if e.hr is None else repr(e.hr), repr(1.0 - e.ret), repr(1.0 - e.best_ret)])
    return report_path, csv_path


def write_plot_data(logs: Sequence, out_dir: str | os.PathLike) -> list[Path]:
    """x/y series as two-column CSV files, one file per series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series: dict[str, list[tuple[float, float]]] = {"ret": [], "best_ret": [], "hr": [], "total_latency_ms": []}
    for e in logs:
        series["ret"].append((e.iteration, e.ret))
        series["best_ret"].append((e.iteration, e.best_ret))
        series["total_latency_ms"].append((e.iteration, e.total_latency_ms))
        if e.hr is not None:
            series["hr"].append((e.iteration, e.hr))
    baseline, final, best = _per_query(logs)
    for name, values in (("baseline", baseline), ("final", final), ("best", best)):
        data = sorted(values.values())
        series[f"cdf_{name}"] = [(v, (i + 1) / len(data)) for i, v in enumerate(data)]
    paths = []
    for name, points in series.items():
        path = out / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"])
            writer.writerows([(x, repr(float(y))) for x, y in points])
        paths.append(path)
    return paths
