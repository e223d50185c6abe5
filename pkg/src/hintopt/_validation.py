"""Input checks shared by the estimator classes."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

from .hints import Hint, parse_hint


def check_sql_ids(X: Iterable, name: str = "X") -> list[str]:
    """Accept a sequence of sql_ids or of ``(sql_id, sql)`` pairs; return the ids."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of sql_ids, not a single string")
    ids = [item[0] if isinstance(item, (tuple, list)) else item for item in X]
    if not ids:
        raise ValueError(f"{name} is empty")
    for sid in ids:
        if not isinstance(sid, str) or not sid:
            raise TypeError(f"{name} entries must be non-empty strings, got {sid!r}")
    return ids


def check_queries(X: Iterable, name: str = "X") -> list[tuple[str, str]]:
    """Normalize to ``(sql_id, sql)`` pairs."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of (sql_id, sql) pairs")
    out = []
    for item in X:
        if not isinstance(item, (tuple, list)) or len(item) != 2:
            raise TypeError(f"{name} entries must be (sql_id, sql) pairs, got {item!r}")
        sid, sql = item
        if not isinstance(sid, str) or not sid or not isinstance(sql, str):
            raise TypeError(f"{name} entries must be (str, str), got {item!r}")
        out.append((sid, sql))
    ids = [sid for sid, _ in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{name} contains duplicate sql_ids")
    return out


def check_hints(y: Sequence, n: int, name: str = "y") -> list[Hint]:
    hints = [h if isinstance(h, Hint) else parse_hint(str(h)) for h in y]
    if len(hints) != n:
        raise ValueError(f"{name} has {len(hints)} entries, expected {n}")
    return hints


def check_positive(value: float, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value
