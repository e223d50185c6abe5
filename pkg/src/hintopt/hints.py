"""Hint language: data model, parser, canonical serializer, translators.

A hint is either *join-order* (a single ``Leading`` clause) or *full-plan*
(scan-method clauses, join-method clauses and a ``Leading`` clause).  The
join tree inside ``Leading`` is represented as nested 2-tuples of alias
strings, e.g. ``("a", ("b", "c"))`` for ``Leading (a (b c))``.

Canonical text puts clauses in a fixed order (scans in leaf order, joins in
post-order of the tree, then ``Leading``) separated by single spaces.  The
grammar is documented in ``docs/hint-grammar.md``.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Union

from .errors import HintOptError

JoinTree = Union[str, tuple["JoinTree", "JoinTree"]]


class HintMode(str, enum.Enum):
    JOIN_ORDER = "join_order"
    FULL_PLAN = "full_plan"

    @classmethod
    def coerce(cls, value: HintMode | str) -> HintMode:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"jo": "join_order", "joinorder": "join_order", "full": "full_plan", "fullplan": "full_plan"}
        return cls(aliases.get(key, key))


SCAN_METHODS = ("SeqScan", "IndexScan", "IndexOnlyScan", "BitmapScan", "TidScan")
JOIN_METHODS = ("NestLoop", "HashJoin", "MergeJoin")
LEADING = "Leading"

_CANONICAL_NAMES = {name.lower(): name for name in SCAN_METHODS + JOIN_METHODS + (LEADING,)}
_CANONICAL_NAMES["nestedloop"] = "NestLoop"


class ErrorKind(str, enum.Enum):
    BRACKET_MISMATCH = "BracketMismatch"
    REPEATED_CHUNK = "RepeatedChunk"
    UNKNOWN_ALIAS = "UnknownAlias"
    UNKNOWN_METHOD = "UnknownMethod"
    DUPLICATE_ALIAS = "DuplicateAlias"
    TRUNCATED = "Truncated"
    MALFORMED = "Malformed"


class HintValidationError(HintOptError, ValueError):
    """A hint text was rejected; ``position`` is a character offset into it."""

    code = "E150"

    def __init__(self, kind: ErrorKind, position: int, detail: str):
        super().__init__(f"{kind.value} at offset {position}: {detail}")
        self.kind = ErrorKind(kind)
        self.position = position
        self.detail = detail


# ---------------------------------------------------------------------------
# join tree helpers


def tree_leaves(tree: JoinTree) -> list[str]:
    if isinstance(tree, str):
        return [tree]
    out: list[str] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, str):
            out.append(node)
        else:
            stack.append(node[1])
            stack.append(node[0])
    return out


def tree_joins(tree: JoinTree) -> list[JoinTree]:
    """Internal nodes in post-order (children before parent, left first)."""
    if isinstance(tree, str):
        return []
    return tree_joins(tree[0]) + tree_joins(tree[1]) + [tree]


def tree_size(tree: JoinTree) -> int:
    return len(tree_leaves(tree))


def _render_item(tree: JoinTree) -> str:
    if isinstance(tree, str):
        return tree
    return f"({_render_inner(tree)})"


def _render_inner(tree: JoinTree) -> str:
    if isinstance(tree, str):
        return tree
    return f"{_render_item(tree[0])} {_render_item(tree[1])}"


def render_tree(tree: JoinTree) -> str:
    """``("a", ("b", "c"))`` -> ``"a (b c)"`` (the text inside ``Leading (...)``)."""
    return _render_inner(tree)


def _canonical_method(name: str, allowed: tuple[str, ...]) -> str:
    canon = _CANONICAL_NAMES.get(name.lower())
    if canon not in allowed:
        raise ValueError(f"{name!r} is not one of {allowed}")
    return canon


# ---------------------------------------------------------------------------
# the Hint value


@dataclass(frozen=True)
class Hint:
    """Structured hint.  Instances are always canonical, so ``==`` is structural.

    ``scans`` holds ``(method, alias)`` pairs and ``joins`` holds
    ``(method, aliases)`` pairs where ``aliases`` is the leaf-ordered alias
    tuple of a subtree of ``leading``.
    """

    mode: HintMode
    leading: JoinTree | None = None
    scans: tuple[tuple[str, str], ...] = ()
    joins: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self) -> None:
        mode = HintMode.coerce(self.mode)
        object.__setattr__(self, "mode", mode)
        if self.leading is None:
            if mode is HintMode.JOIN_ORDER:
                raise ValueError("join-order hint needs a Leading tree")
            if len(self.scans) != 1 or self.joins:
                raise ValueError("a hint without Leading must be a single scan clause")
            method, alias = self.scans[0]
            object.__setattr__(self, "scans", ((_canonical_method(method, SCAN_METHODS), alias),))
            return
        leaves = tree_leaves(self.leading)
        if len(set(leaves)) != len(leaves):
            raise ValueError(f"alias repeated in Leading: {leaves}")
        if mode is HintMode.JOIN_ORDER:
            if self.scans or self.joins:
                raise ValueError("join-order hint cannot carry scan or join clauses")
            return
        order = {alias: i for i, alias in enumerate(leaves)}
        scans = []
        for method, alias in self.scans:
            if alias not in order:
                raise ValueError(f"scan alias {alias!r} not in Leading")
            scans.append((_canonical_method(method, SCAN_METHODS), alias))
        if len({a for _, a in scans}) != len(scans):
            raise ValueError("duplicate scan clause")
        scans.sort(key=lambda item: order[item[1]])
        positions = {frozenset(tree_leaves(node)): (i, tuple(tree_leaves(node)))
                     for i, node in enumerate(tree_joins(self.leading))}
        joins = []
        for method, aliases in self.joins:
            key = frozenset(aliases)
            if key not in positions or len(key) != len(tuple(aliases)):
                raise ValueError(f"join set {tuple(aliases)} is not a subtree of Leading")
            joins.append((positions[key][0], _canonical_method(method, JOIN_METHODS), positions[key][1]))
        if len({p for p, _, _ in joins}) != len(joins):
            raise ValueError("duplicate join clause")
        joins.sort()
        object.__setattr__(self, "scans", tuple(scans))
        object.__setattr__(self, "joins", tuple((m, a) for _, m, a in joins))

    # constructors -----------------------------------------------------------

    @classmethod
    def join_order(cls, tree: JoinTree) -> Hint:
        return cls(HintMode.JOIN_ORDER, tree)

    @classmethod
    def full_plan(
        cls,
        tree: JoinTree | None,
        scan_methods: Mapping[str, str],
        join_methods: Mapping[frozenset[str], str] | None = None,
    ) -> Hint:
        joins = tuple((m, tuple(sorted(s))) for s, m in (join_methods or {}).items())
        return cls(HintMode.FULL_PLAN, tree, tuple((m, a) for a, m in scan_methods.items()), joins)

    # accessors --------------------------------------------------------------

    @property
    def aliases(self) -> list[str]:
        if self.leading is None:
            return [self.scans[0][1]]
        return tree_leaves(self.leading)

    @property
    def scan_methods(self) -> dict[str, str]:
        return {alias: method for method, alias in self.scans}

    @property
    def join_methods(self) -> dict[frozenset[str], str]:
        return {frozenset(aliases): method for method, aliases in self.joins}

    def project(self) -> Hint:
        """Join-order projection: keep only the Leading clause."""
        if self.mode is HintMode.JOIN_ORDER:
            return self
        tree = self.leading if self.leading is not None else self.scans[0][1]
        return Hint.join_order(tree)

    def __str__(self) -> str:
        return serialize_hint(self)


# ---------------------------------------------------------------------------
# serialization


def serialize_hint(h: Hint) -> str:
    parts = [f"{method}({alias})" for method, alias in h.scans]
    parts += [f"{method}({' '.join(aliases)})" for method, aliases in h.joins]
    if h.leading is not None:
        parts.append(f"{LEADING} ({render_tree(h.leading)})")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"\s+|/\*\+|\*/|\(|\)|[A-Za-z_][A-Za-z0-9_$]*|[0-9][A-Za-z0-9_$]*|.", re.S)
_NAME = re.compile(r"[A-Za-z_0-9][A-Za-z0-9_$]*")


@dataclass
class _Tok:
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    for m in _TOKEN.finditer(text):
        value = m.group(0)
        if value.isspace() or value in ("/*+", "*/"):
            continue
        if value not in "()" and not _NAME.fullmatch(value):
            raise HintValidationError(ErrorKind.MALFORMED, m.start(), f"unexpected character {value!r}")
        toks.append(_Tok(value, m.start()))
    return toks


def _check_brackets(toks: list[_Tok], length: int) -> None:
    open_stack: list[int] = []
    for tok in toks:
        if tok.text == "(":
            open_stack.append(tok.pos)
        elif tok.text == ")":
            if not open_stack:
                raise HintValidationError(ErrorKind.BRACKET_MISMATCH, tok.pos, "unmatched ')'")
            open_stack.pop()
    if open_stack:
        raise HintValidationError(
            ErrorKind.BRACKET_MISMATCH, open_stack[-1], f"{len(open_stack)} unclosed '(' at end of input"
        )


@dataclass
class _Clause:
    name: str
    pos: int
    args: list  # alias tokens, or a nested item list for Leading


def _parse_group(toks: list[_Tok], i: int) -> tuple[list, int]:
    """Parse items up to the ')' closing the '(' at ``toks[i-1]``."""
    items: list = []
    while toks[i].text != ")":
        if toks[i].text == "(":
            sub, i = _parse_group(toks, i + 1)
            items.append((sub, toks[i - 1].pos))
        else:
            items.append(toks[i])
            i += 1
    return items, i + 1


def _parse_clauses(toks: list[_Tok]) -> list[_Clause]:
    clauses = []
    i = 0
    while i < len(toks):
        tok = toks[i]
        if tok.text in "()":
            raise HintValidationError(ErrorKind.MALFORMED, tok.pos, "expected a clause name")
        canon = _CANONICAL_NAMES.get(tok.text.lower())
        if canon is None:
            kind = ErrorKind.UNKNOWN_METHOD if i + 1 < len(toks) and toks[i + 1].text == "(" else ErrorKind.MALFORMED
            raise HintValidationError(kind, tok.pos, f"unknown clause {tok.text!r}")
        if i + 1 >= len(toks) or toks[i + 1].text != "(":
            raise HintValidationError(ErrorKind.MALFORMED, tok.pos, f"{canon} must be followed by '('")
        items, i = _parse_group(toks, i + 2)
        clauses.append(_Clause(canon, tok.pos, items))
    return clauses


def _leading_tree(items: list, pos: int) -> JoinTree:
    if not items:
        raise HintValidationError(ErrorKind.MALFORMED, pos, "empty group in Leading")
    nodes: list[JoinTree] = []
    for item in items:
        if isinstance(item, _Tok):
            nodes.append(item.text)
        else:
            nodes.append(_leading_tree(item[0], item[1]))
    tree = nodes[0]
    for node in nodes[1:]:  # flat lists fold left-deep
        tree = (tree, node)
    return tree


def _leading_tokens(items: list) -> list[_Tok]:
    out = []
    for item in items:
        if isinstance(item, _Tok):
            out.append(item)
        else:
            out.extend(_leading_tokens(item[0]))
    return out


def parse_hint(text: str, known_aliases: Iterable[str] | None = None) -> Hint:
    """Parse hint text into a canonical :class:`Hint`.

    ``known_aliases`` may repeat an alias to allow it more than once in
    ``Leading``; ``None`` disables the unknown-alias check.
    """
    toks = _tokenize(text)
    if not toks:
        raise HintValidationError(ErrorKind.TRUNCATED, len(text), "no hint clauses in input")
    _check_brackets(toks, len(text))
    clauses = _parse_clauses(toks)

    multiplicity = Counter(known_aliases) if known_aliases is not None else None
    leading_clauses = [c for c in clauses if c.name == LEADING]
    if len(leading_clauses) > 1:
        raise HintValidationError(ErrorKind.MALFORMED, leading_clauses[1].pos, "more than one Leading clause")

    tree: JoinTree | None = None
    if leading_clauses:
        clause = leading_clauses[0]
        seen: Counter = Counter()
        for tok in _leading_tokens(clause.args):
            seen[tok.text] += 1
            limit = multiplicity[tok.text] if multiplicity and tok.text in multiplicity else 1
            if seen[tok.text] > limit:
                raise HintValidationError(
                    ErrorKind.REPEATED_CHUNK, tok.pos, f"alias {tok.text!r} repeated in Leading beyond {limit}"
                )
        tree = _leading_tree(clause.args, clause.pos)

    scans: list[tuple[str, str]] = []
    joins: list[tuple[str, tuple[str, ...]]] = []
    seen_scans: set[str] = set()
    seen_joins: set[frozenset[str]] = set()
    for clause in clauses:
        if clause.name == LEADING:
            continue
        if any(not isinstance(a, _Tok) for a in clause.args):
            raise HintValidationError(ErrorKind.MALFORMED, clause.pos, f"nested group inside {clause.name}")
        names = [a.text for a in clause.args]
        if clause.name in SCAN_METHODS:
            if len(names) != 1:
                raise HintValidationError(ErrorKind.MALFORMED, clause.pos, f"{clause.name} takes exactly one alias")
            if names[0] in seen_scans:
                raise HintValidationError(ErrorKind.DUPLICATE_ALIAS, clause.pos, f"second scan clause for {names[0]!r}")
            seen_scans.add(names[0])
            scans.append((clause.name, names[0]))
        else:
            if len(names) < 2:
                raise HintValidationError(ErrorKind.MALFORMED, clause.pos, f"{clause.name} needs at least two aliases")
            dup = [a for a in clause.args if names.count(a.text) > 1]
            if dup:
                raise HintValidationError(ErrorKind.DUPLICATE_ALIAS, dup[-1].pos, f"alias {dup[-1].text!r} repeated in {clause.name}")
            key = frozenset(names)
            if key in seen_joins:
                raise HintValidationError(ErrorKind.DUPLICATE_ALIAS, clause.pos, f"second join clause for {sorted(key)}")
            seen_joins.add(key)
            joins.append((clause.name, tuple(names)))

    if multiplicity is not None:
        for clause in clauses:
            for tok in _leading_tokens(clause.args):
                if tok.text not in multiplicity:
                    raise HintValidationError(ErrorKind.UNKNOWN_ALIAS, tok.pos, f"alias {tok.text!r} is not in the query")

    if tree is None:
        if joins or len(scans) != 1:
            raise HintValidationError(ErrorKind.MALFORMED, 0, "hint over several tables needs a Leading clause")
        return Hint(HintMode.FULL_PLAN, None, tuple(scans))
    if not scans and not joins:
        return Hint.join_order(tree)

    leaves = set(tree_leaves(tree))
    subtrees = {frozenset(tree_leaves(node)) for node in tree_joins(tree)}
    for clause in clauses:
        if clause.name == LEADING:
            continue
        names = [a.text for a in clause.args]
        if not set(names) <= leaves:
            raise HintValidationError(ErrorKind.MALFORMED, clause.pos, f"{clause.name} names aliases missing from Leading")
        if clause.name in JOIN_METHODS and frozenset(names) not in subtrees:
            raise HintValidationError(ErrorKind.MALFORMED, clause.pos, f"{clause.name} set is not a subtree of Leading")
    return Hint(HintMode.FULL_PLAN, tree, tuple(scans), tuple(joins))


# ---------------------------------------------------------------------------
# generated-text normalization

_CLAUSE_START = re.compile(
    r"(?<![A-Za-z0-9_])(" + "|".join(sorted(_CANONICAL_NAMES, key=len, reverse=True)) + r")\s*\(",
    re.I,
)


def _clause_end(window: str, start: int) -> int | None:
    """Index just past the ')' closing the clause opened at ``start``; None if unclosed."""
    depth = 0
    i = window.index("(", start)
    while i < len(window):
        ch = window[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None


def normalize_generated_text(text: str, known_aliases: Iterable[str] | None, budget: int = 4096) -> Hint:
    """Pull the first hint-like span out of free-form generator output and parse it.

    At most ``budget`` characters are examined.  A hint that does not close
    inside the budget raises ``Truncated`` so runaway generations abort early.
    """
    window = text[:budget]
    cut = len(text) > budget
    m = _CLAUSE_START.search(window)
    if m is None:
        where = budget if cut else len(text)
        raise HintValidationError(ErrorKind.TRUNCATED, where, "no hint found before the output budget")
    start = end = m.start()
    pos = start
    while True:
        stop = _clause_end(window, pos)
        if stop is None:
            if cut:
                raise HintValidationError(ErrorKind.TRUNCATED, budget, "hint still open at the output budget")
            end = len(window)  # let the parser report the bracket problem
            break
        end = stop
        while stop < len(window) and window[stop].isspace():
            stop += 1
        nxt = _CLAUSE_START.match(window, stop)
        if nxt is None:
            break
        pos = nxt.start()
    try:
        return parse_hint(window[start:end], known_aliases)
    except HintValidationError as exc:
        raise HintValidationError(exc.kind, exc.position + start, exc.detail) from None


# ---------------------------------------------------------------------------
# comparisons and translation


def hint_equals_default(h: Hint, default_plan_hint: Hint, compare: HintMode | str | None = None) -> bool:
    """True when ``h`` would reproduce the engine's own plan.

    Two full-plan hints are compared clause by clause; as soon as either side
    is join-order only (or ``compare`` says so) only the Leading trees count.
    """
    if compare is None:
        both_full = h.mode is HintMode.FULL_PLAN and default_plan_hint.mode is HintMode.FULL_PLAN
        compare = HintMode.FULL_PLAN if both_full else HintMode.JOIN_ORDER
    if HintMode.coerce(compare) is HintMode.FULL_PLAN:
        return h == default_plan_hint
    return h.project() == default_plan_hint.project()


def translate_to_join_sequence(h: Hint) -> list[str]:
    """Linear join order for engines that only accept a table sequence."""
    return h.aliases
