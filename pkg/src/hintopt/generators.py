"""Hint generators: scripted and mutating mocks, and a chat-completions HTTP client."""

from __future__ import annotations

import json
import math
import os
import socket
import threading
import urllib.error
import urllib.request
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from ._seeding import derive_rng
from .engine import SIM_SCAN_METHODS, random_tree
from .errors import ConfigError, RemoteTimeout, RemoteUnavailable
from .hints import JOIN_METHODS, Hint, HintMode, JoinTree, normalize_generated_text, tree_joins, tree_leaves
from .prompts import BestSoFarSection, PromptBundle, ReferencesSection

EDIT_KINDS = ("leaf_swap", "rotation", "join_method", "scan_method")
DEFAULT_WEIGHTS = {kind: 0.25 for kind in EDIT_KINDS}
DEFAULT_BUDGET = 4096


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "mutating"
    outputs: Sequence[str] | Mapping[str, Sequence[str]] = ()
    seed: int = 0
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    mode: str | None = None
    endpoint: str = ""
    model: str = ""
    token_env: str = "HINTOPT_API_TOKEN"
    timeout_s: float = 60.0
    max_in_flight: int = 4
    output_budget: int = DEFAULT_BUDGET

    def __post_init__(self) -> None:
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in ("scripted", "mutating", "remote"):
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if kind == "scripted":
            scripts = self.outputs.values() if isinstance(self.outputs, Mapping) else [self.outputs]
            if not self.outputs or any(len(s) == 0 for s in scripts):
                raise ConfigError("scripted generator needs a non-empty output list")
        if kind == "mutating":
            unknown = set(self.weights) - set(EDIT_KINDS)
            if unknown:
                raise ConfigError(f"unknown mutation kinds: {sorted(unknown)}")
            if any(w < 0 for w in self.weights.values()) or not math.isclose(sum(self.weights.values()), 1.0, abs_tol=1e-9):
                raise ConfigError("mutation weights must be non-negative and sum to 1")
        if kind == "remote" and not self.endpoint:
            raise ConfigError("remote generator needs an endpoint")
        if self.output_budget < 1 or self.max_in_flight < 1 or not self.timeout_s > 0:
            raise ConfigError("output_budget, max_in_flight and timeout_s must be positive")


# ---------------------------------------------------------------------------
# tree edits


def _method_list(h: Hint) -> list[str]:
    return [m for m, _ in h.joins]


def _rebuild(h: Hint, tree: JoinTree, join_methods: list[str] | None = None) -> Hint:
    """Same scans (per alias) and join methods (per post-order slot) on a new tree."""
    if h.mode is HintMode.JOIN_ORDER:
        return Hint.join_order(tree)
    methods = join_methods if join_methods is not None else _method_list(h)
    subsets = [frozenset(tree_leaves(j)) for j in tree_joins(tree)]
    return Hint.full_plan(tree, h.scan_methods, dict(zip(subsets, methods)) if methods else None)


def _swap_leaves(tree: JoinTree, a: str, b: str) -> JoinTree:
    if isinstance(tree, str):
        return b if tree == a else a if tree == b else tree
    return (_swap_leaves(tree[0], a, b), _swap_leaves(tree[1], a, b))


def _rotations(tree: JoinTree, path: tuple = ()) -> list[tuple[tuple, str]]:
    """(path to node, direction) for every rotation, including flipping a node's children."""
    if isinstance(tree, str):
        return []
    out = [(path, "flip")]
    if not isinstance(tree[0], str):
        out.append((path, "right"))
    if not isinstance(tree[1], str):
        out.append((path, "left"))
    return out + _rotations(tree[0], path + (0,)) + _rotations(tree[1], path + (1,))


def _rotate(tree: JoinTree, path: tuple, direction: str) -> JoinTree:
    if path:
        head, rest = path[0], path[1:]
        kids = list(tree)
        kids[head] = _rotate(tree[head], rest, direction)
        return tuple(kids)
    if direction == "flip":  # (A B) -> (B A)
        return (tree[1], tree[0])
    if direction == "right":  # ((A B) C) -> (A (B C))
        (a, b), c = tree
        return (a, (b, c))
    a, (b, c) = tree  # (A (B C)) -> ((A B) C)
    return ((a, b), c)


def applicable_edits(h: Hint) -> list[str]:
    n = len(h.aliases)
    kinds = []
    if n >= 2:
        kinds += ["leaf_swap", "rotation"]
    if h.mode is HintMode.FULL_PLAN:
        if h.joins:
            kinds.append("join_method")
        kinds.append("scan_method")
    return kinds


def mutate_hint(
    h: Hint,
    seed: int | np.random.Generator,
    weights: Mapping[str, float] | None = None,
) -> Hint:
    """Apply one local edit chosen by ``weights`` among the edits ``h`` admits.

    Returns ``h`` unchanged only when no edit applies (a single-alias
    join-order hint).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    kinds = [k for k in applicable_edits(h) if weights.get(k, 0.0) > 0]
    if not kinds:
        return h
    w = np.array([weights[k] for k in kinds])
    kind = kinds[int(rng.choice(len(kinds), p=w / w.sum()))]
    if kind == "leaf_swap":
        leaves = h.aliases
        i, j = rng.choice(len(leaves), size=2, replace=False)
        return _rebuild(h, _swap_leaves(h.leading, leaves[i], leaves[j]))
    if kind == "rotation":
        options = _rotations(h.leading)
        path, direction = options[int(rng.integers(len(options)))]
        return _rebuild(h, _rotate(h.leading, path, direction))
    if kind == "join_method":
        methods = _method_list(h)
        slot = int(rng.integers(len(methods)))
        others = [m for m in JOIN_METHODS if m != methods[slot]]
        methods[slot] = others[int(rng.integers(len(others)))]
        return _rebuild(h, h.leading, methods)
    scans = h.scan_methods
    alias = h.aliases[int(rng.integers(len(h.aliases)))]
    others = [m for m in SIM_SCAN_METHODS if m != scans[alias]]
    scans[alias] = others[int(rng.integers(len(others)))]
    return Hint(HintMode.FULL_PLAN, h.leading, tuple((m, a) for a, m in scans.items()), h.joins)


def _prune(tree: JoinTree, keep: set[str]) -> JoinTree | None:
    if isinstance(tree, str):
        return tree if tree in keep else None
    left, right = _prune(tree[0], keep), _prune(tree[1], keep)
    if left is None or right is None:
        return left if right is None else right
    return (left, right)


def project_onto_aliases(h: Hint, aliases: Sequence[str]) -> Hint | None:
    """Reuse a hint from another query: drop foreign aliases, append missing ones left-deep."""
    keep = set(aliases)
    tree = _prune(h.leading if h.leading is not None else h.aliases[0], keep)
    if tree is None:
        return None
    present = set(tree_leaves(tree))
    for alias in aliases:
        if alias not in present:
            tree = (tree, alias)
    if isinstance(tree, str):
        return Hint.full_plan(None, {tree: h.scan_methods.get(tree, "SeqScan")})
    if h.mode is HintMode.JOIN_ORDER:
        return Hint.join_order(tree)
    scans = {a: h.scan_methods.get(a, "SeqScan") for a in aliases}
    old = h.join_methods
    joins = {frozenset(tree_leaves(j)): old.get(frozenset(tree_leaves(j)), "HashJoin") for j in tree_joins(tree)}
    return Hint.full_plan(tree, scans, joins)


def coerce_mode(h: Hint, mode: HintMode | str | None) -> Hint:
    if mode is None or h.leading is None:
        return h
    mode = HintMode.coerce(mode)
    if mode is h.mode:
        return h
    if mode is HintMode.JOIN_ORDER:
        return h.project()
    subsets = [frozenset(tree_leaves(j)) for j in tree_joins(h.leading)]
    return Hint.full_plan(h.leading, {a: "SeqScan" for a in h.aliases}, {s: "HashJoin" for s in subsets})


# ---------------------------------------------------------------------------
# generators


class ScriptedGenerator:
    """Replays fixed outputs; the n-th call for a query gets item n (the last one repeats)."""

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: PromptBundle, known_aliases: Sequence[str]) -> str:
        outputs = self.spec.outputs
        script = outputs.get(prompt.sql_id, outputs.get("*", ())) if isinstance(outputs, Mapping) else outputs
        if not script:
            raise ConfigError(f"no scripted output for {prompt.sql_id!r}")
        with self._lock:
            n = self._calls.get(prompt.sql_id, 0)
            self._calls[prompt.sql_id] = n + 1
        return script[min(n, len(script) - 1)]


class MutatingGenerator:
    """Edits the best-so-far hint (or a projected reference, or a random tree) once per call.

    Only the BestSoFar and References sections of the prompt are read.  The
    random stream is keyed by (seed, sql_id, iteration).
    """

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec

    def base_hint(self, prompt: PromptBundle, known_aliases: Sequence[str], rng: np.random.Generator) -> Hint:
        best = prompt.section(BestSoFarSection)
        if best is not None and sorted(best.hint.aliases) == sorted(known_aliases):
            return coerce_mode(best.hint, self.spec.mode)
        refs = prompt.section(ReferencesSection)
        if refs is not None and refs.items:
            projected = project_onto_aliases(refs.items[0].hint, known_aliases)
            if projected is not None:
                return coerce_mode(projected, self.spec.mode)
        tree = random_tree(known_aliases, rng)
        if isinstance(tree, str):
            return Hint.full_plan(None, {tree: "SeqScan"})
        return coerce_mode(Hint.join_order(tree), self.spec.mode or HintMode.JOIN_ORDER)

    def complete(self, prompt: PromptBundle, known_aliases: Sequence[str]) -> str:
        rng = derive_rng(self.spec.seed, prompt.sql_id, prompt.iteration)
        base = self.base_hint(prompt, list(known_aliases), rng)
        return str(mutate_hint(base, rng, self.spec.weights))


class RemoteGenerator:
    """Chat-completions client (request/response schema in docs/remote-api.md)."""

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self._slots = threading.BoundedSemaphore(spec.max_in_flight)

    def request_body(self, prompt: PromptBundle) -> dict:
        return {
            "model": self.spec.model,
            "messages": [
                {"role": "system", "content": prompt.system_prompt},
                {"role": "user", "content": prompt.user_prompt},
            ],
            "temperature": 0,
            "stream": False,
        }

    def complete(self, prompt: PromptBundle, known_aliases: Sequence[str]) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.spec.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        data = json.dumps(self.request_body(prompt)).encode()
        req = urllib.request.Request(self.spec.endpoint, data=data, headers=headers, method="POST")
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.spec.timeout_s) as resp:
                    raw = resp.read(self.spec.output_budget * 8 + 65536)
            except urllib.error.HTTPError as exc:
                raise RemoteUnavailable(f"endpoint answered HTTP {exc.code}") from exc
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                    raise RemoteTimeout(f"no answer within {self.spec.timeout_s:g} s") from exc
                raise RemoteUnavailable(f"cannot reach {self.spec.endpoint}: {exc.reason}") from exc
            except (socket.timeout, TimeoutError) as exc:
                raise RemoteTimeout(f"no answer within {self.spec.timeout_s:g} s") from exc
            except OSError as exc:
                raise RemoteUnavailable(f"cannot reach {self.spec.endpoint}: {exc}") from exc
        try:
            content = json.loads(raw)["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RemoteUnavailable("malformed chat-completions response") from exc
        if not isinstance(content, str):
            raise RemoteUnavailable("response content is not text")
        return content


def make_generator(spec: GeneratorSpec):
    return {"scripted": ScriptedGenerator, "mutating": MutatingGenerator, "remote": RemoteGenerator}[spec.kind](spec)


def generate(gen, prompt: PromptBundle, known_aliases: Iterable[str]) -> Hint:
    """Raw generator output, validated.  Raises a typed error instead of returning bad hints."""
    aliases = list(known_aliases)
    text = gen.complete(prompt, aliases)
    return normalize_generated_text(text, aliases, gen.spec.output_budget)
