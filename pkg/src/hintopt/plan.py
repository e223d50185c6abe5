"""Execution plans: EXPLAIN-JSON parsing, simplification and hint extraction."""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import MalformedDocument, MissingField, NotAJoinTree, UnsupportedShape
from .hints import Hint, HintMode, JoinTree, tree_leaves


class Operator(str, enum.Enum):
    SEQ_SCAN = "SeqScan"
    INDEX_SCAN = "IndexScan"
    INDEX_ONLY_SCAN = "IndexOnlyScan"
    BITMAP_SCAN = "BitmapScan"
    TID_SCAN = "TidScan"
    HASH_JOIN = "HashJoin"
    MERGE_JOIN = "MergeJoin"
    NESTED_LOOP = "NestedLoop"
    AGGREGATE = "Aggregate"
    SORT = "Sort"
    OTHER = "Other"

    @property
    def is_scan(self) -> bool:
        return self in _SCAN_HINTS

    @property
    def is_join(self) -> bool:
        return self in _JOIN_HINTS


_SCAN_HINTS = {
    Operator.SEQ_SCAN: "SeqScan",
    Operator.INDEX_SCAN: "IndexScan",
    Operator.INDEX_ONLY_SCAN: "IndexOnlyScan",
    Operator.BITMAP_SCAN: "BitmapScan",
    Operator.TID_SCAN: "TidScan",
}
_JOIN_HINTS = {
    Operator.HASH_JOIN: "HashJoin",
    Operator.MERGE_JOIN: "MergeJoin",
    Operator.NESTED_LOOP: "NestLoop",
}
SCAN_OPERATOR = {v: k for k, v in _SCAN_HINTS.items()}
JOIN_OPERATOR = {v: k for k, v in _JOIN_HINTS.items()}

# PostgreSQL "Node Type" spellings, plus the compact names used in hints.
_NODE_TYPES = {
    "seq scan": Operator.SEQ_SCAN,
    "index scan": Operator.INDEX_SCAN,
    "index only scan": Operator.INDEX_ONLY_SCAN,
    "bitmap heap scan": Operator.BITMAP_SCAN,
    "tid scan": Operator.TID_SCAN,
    "hash join": Operator.HASH_JOIN,
    "merge join": Operator.MERGE_JOIN,
    "nested loop": Operator.NESTED_LOOP,
    "aggregate": Operator.AGGREGATE,
    "sort": Operator.SORT,
}
_NODE_TYPES.update({op.value.lower(): op for op in Operator if op is not Operator.OTHER})
_NODE_TYPES["nestloop"] = Operator.NESTED_LOOP

_MODELED_KEYS = {"Node Type", "Plans", "Alias", "Plan Rows", "Actual Rows"}
_SUBPLAN_RELATIONSHIPS = {"InitPlan", "SubPlan"}


@dataclass(frozen=True)
class PlanNode:
    operator: Operator
    relation: str | None = None
    estimated_rows: float = 0.0
    actual_rows: float | None = None
    children: tuple[PlanNode, ...] = ()
    extra: Mapping[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        if self.operator is Operator.OTHER:
            return self.extra.get("node_type", "Other")
        return self.operator.value

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class PlanStats:
    table_cardinalities: Mapping[str, float] = field(default_factory=dict)
    filter_selectivities: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for alias, card in self.table_cardinalities.items():
            if card < 0:
                raise ValueError(f"negative cardinality for {alias!r}")
        for alias, sel in self.filter_selectivities.items():
            if not 0.0 <= sel <= 1.0:
                raise ValueError(f"selectivity for {alias!r} outside [0, 1]: {sel}")

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            "table_cardinalities": dict(self.table_cardinalities),
            "filter_selectivities": dict(self.filter_selectivities),
        }


@dataclass(frozen=True)
class ExecutionOutcome:
    plan: PlanNode
    latency_ms: float
    timed_out: bool = False
    stats: PlanStats = field(default_factory=PlanStats)

    def __post_init__(self) -> None:
        if not self.latency_ms >= 0:
            raise ValueError(f"latency must be >= 0, got {self.latency_ms}")


@dataclass(frozen=True)
class ExplainDocument:
    plan: PlanNode
    execution_time_ms: float | None = None
    planning_time_ms: float | None = None


# ---------------------------------------------------------------------------
# parsing


def _as_text(value: Any) -> str:
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


def _node_from_dict(node: Any, path: str) -> PlanNode:
    if not isinstance(node, dict):
        raise MalformedDocument(f"{path}: plan node must be an object, got {type(node).__name__}")
    if "Node Type" not in node:
        raise MissingField(f"{path}: node has no 'Node Type'")
    node_type = str(node["Node Type"])
    operator = _NODE_TYPES.get(node_type.lower(), Operator.OTHER)
    extra = {k: _as_text(v) for k, v in node.items() if k not in _MODELED_KEYS}
    if operator is Operator.OTHER:
        extra["node_type"] = node_type

    raw_children = node.get("Plans", [])
    if not isinstance(raw_children, list):
        raise MalformedDocument(f"{path}: 'Plans' must be a list")
    structural = [c for c in raw_children if not (isinstance(c, dict) and c.get("Parent Relationship") in _SUBPLAN_RELATIONSHIPS)]
    if len(structural) != len(raw_children):
        extra["subplans"] = str(len(raw_children) - len(structural))

    relation = node.get("Alias") or node.get("Relation Name")
    if operator.is_scan:
        if not relation:
            raise MissingField(f"{path}: {node_type} has no 'Alias' or 'Relation Name'")
        if structural:
            if operator is not Operator.BITMAP_SCAN:
                raise UnsupportedShape(f"{path}: scan node {node_type} has child plans")
            # bitmap heap scans sit on bitmap index scans; keep them as detail
            extra["bitmap_children"] = ",".join(str(c.get("Node Type")) for c in structural)
            structural = []
    children = tuple(_node_from_dict(c, f"{path}/{i}") for i, c in enumerate(structural))
    if operator.is_join and len(children) != 2:
        raise UnsupportedShape(f"{path}: join node {node_type} has {len(children)} children, expected 2")

    actual = node.get("Actual Rows")
    return PlanNode(
        operator=operator,
        relation=str(relation) if relation else None,
        estimated_rows=float(node.get("Plan Rows", 0.0)),
        actual_rows=None if actual is None else float(actual),
        children=children,
        extra=extra,
    )


def load_explain(document: str | bytes | dict | list) -> ExplainDocument:
    """Parse a PostgreSQL ``EXPLAIN (FORMAT JSON)`` document (optionally ANALYZEd)."""
    if isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"not JSON: {exc}") from exc
    else:
        data = document
    if isinstance(data, list):
        if len(data) != 1:
            raise MalformedDocument(f"expected a single plan document, got a list of {len(data)}")
        data = data[0]
    if not isinstance(data, dict):
        raise MalformedDocument("root must be an object")
    if "Plan" in data:
        root = _node_from_dict(data["Plan"], "Plan")
        return ExplainDocument(root, data.get("Execution Time"), data.get("Planning Time"))
    return ExplainDocument(_node_from_dict(data, "Plan"))


def parse_plan_json(document: str | bytes | dict | list) -> PlanNode:
    return load_explain(document).plan


# ---------------------------------------------------------------------------
# simplification and extraction


def simplify_plan(root: PlanNode) -> PlanNode:
    """Splice out every non-structural unary node (Aggregate, Sort, Hash, Gather...).

    Scans and joins are kept in place.  A spliced Gather leaves a
    ``parallel`` marker in the surviving child's ``extra``.
    """
    children = tuple(simplify_plan(c) for c in root.children)
    if len(children) == 1 and not root.operator.is_scan and not root.operator.is_join:
        child = children[0]
        if root.name in ("Gather", "Gather Merge"):
            child = replace(child, extra={**child.extra, "parallel": root.name})
        return child
    if children == root.children:
        return root
    return replace(root, children=children)


def extract_tables(root: PlanNode) -> list[str]:
    """Distinct relation aliases in left-to-right leaf order."""
    out: list[str] = []
    for node in root.walk():
        if node.operator.is_scan and node.relation and node.relation not in out:
            out.append(node.relation)
    return out


def _extract(node: PlanNode, scans: dict, joins: dict) -> JoinTree:
    if node.operator.is_scan:
        if node.relation in scans:
            raise NotAJoinTree(f"alias {node.relation!r} is scanned twice")
        scans[node.relation] = _SCAN_HINTS[node.operator]
        return node.relation
    if node.operator.is_join:
        left = _extract(node.children[0], scans, joins)
        right = _extract(node.children[1], scans, joins)
        tree = (left, right)
        joins[frozenset(tree_leaves(tree))] = _JOIN_HINTS[node.operator]
        return tree
    raise NotAJoinTree(f"{node.name} node with {len(node.children)} children cannot appear in a join tree")


def extract_hint(root: PlanNode, mode: HintMode | str = HintMode.FULL_PLAN) -> Hint:
    """Hint that reproduces ``root``.

    A single-table plan yields one scan clause and no Leading, whatever the
    mode.  Non-simplified input is simplified first.
    """
    mode = HintMode.coerce(mode)
    scans: dict[str, str] = {}
    joins: dict[frozenset[str], str] = {}
    tree = _extract(simplify_plan(root), scans, joins)
    if isinstance(tree, str):
        return Hint.full_plan(None, scans)
    if mode is HintMode.JOIN_ORDER:
        return Hint.join_order(tree)
    return Hint.full_plan(tree, scans, joins)


def stats_from_plan(root: PlanNode) -> PlanStats:
    """Per-alias cardinalities and filter selectivities read off scan nodes.

    Cardinality is the scan's output rows (actual when analyzed, else the
    estimate).  Selectivity comes from an explicit ``Filter Selectivity``
    attribute, else ``actual / Base Rows``, else ``actual / (actual + Rows
    Removed by Filter)``; otherwise it is omitted.
    """
    cards: dict[str, float] = {}
    sels: dict[str, float] = {}
    for node in root.walk():
        if not node.operator.is_scan or not node.relation or node.relation in cards:
            continue
        alias = node.relation
        cards[alias] = node.actual_rows if node.actual_rows is not None else node.estimated_rows
        sel = None
        if "Filter Selectivity" in node.extra:
            sel = float(node.extra["Filter Selectivity"])
        elif node.actual_rows is not None and "Base Rows" in node.extra:
            base = float(node.extra["Base Rows"])
            sel = node.actual_rows / base if base > 0 else None
        elif node.actual_rows is not None and "Rows Removed by Filter" in node.extra:
            scanned = node.actual_rows + float(node.extra["Rows Removed by Filter"])
            sel = node.actual_rows / scanned if scanned > 0 else None
        if sel is not None:
            sels[alias] = min(1.0, max(0.0, sel))
    return PlanStats(cards, sels)


# ---------------------------------------------------------------------------
# serialization back to EXPLAIN shape (used by the simulated engine and fixtures)

_PG_NAMES = {
    Operator.SEQ_SCAN: "Seq Scan",
    Operator.INDEX_SCAN: "Index Scan",
    Operator.INDEX_ONLY_SCAN: "Index Only Scan",
    Operator.BITMAP_SCAN: "Bitmap Heap Scan",
    Operator.TID_SCAN: "Tid Scan",
    Operator.HASH_JOIN: "Hash Join",
    Operator.MERGE_JOIN: "Merge Join",
    Operator.NESTED_LOOP: "Nested Loop",
    Operator.AGGREGATE: "Aggregate",
    Operator.SORT: "Sort",
}


def plan_to_dict(node: PlanNode) -> dict[str, Any]:
    out: dict[str, Any] = {"Node Type": _PG_NAMES.get(node.operator, node.name)}
    if node.relation:
        out["Alias"] = node.relation
    out["Plan Rows"] = node.estimated_rows
    if node.actual_rows is not None:
        out["Actual Rows"] = node.actual_rows
    for key, value in node.extra.items():
        if key != "node_type":
            out[key] = value
    if node.children:
        out["Plans"] = [plan_to_dict(c) for c in node.children]
    return out


def plan_from_hint(
    h: Hint,
    cardinalities: Mapping[str, float] | None = None,
    default_scan: str = "SeqScan",
    default_join: str = "HashJoin",
) -> PlanNode:
    """Build the simplified plan tree a hint pins down.

    Clauses missing from ``h`` (all of them, for a join-order hint) take the
    given defaults.  ``extract_hint(plan_from_hint(h))`` returns ``h`` for
    full-plan hints.
    """
    cards = cardinalities or {}
    scans = h.scan_methods
    joins = h.join_methods

    def build(tree: JoinTree) -> PlanNode:
        if isinstance(tree, str):
            op = SCAN_OPERATOR[scans.get(tree, default_scan)]
            return PlanNode(op, tree, float(cards.get(tree, 0.0)))
        left, right = build(tree[0]), build(tree[1])
        op = JOIN_OPERATOR[joins.get(frozenset(tree_leaves(tree)), default_join)]
        rows = max(left.estimated_rows, right.estimated_rows)
        return PlanNode(op, None, rows, children=(left, right))

    return build(h.leading if h.leading is not None else h.aliases[0])
