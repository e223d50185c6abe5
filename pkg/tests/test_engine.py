"""Execution engines: the simulator, hint-space enumeration, replay and adapters."""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintopt.engine import (
    EngineRequest,
    PostgresEngine,
    ReplayEngine,
    SimEngine,
    SimQuery,
    SimWorkload,
    count_trees,
    enumerate_hint_space,
    enumerate_trees,
    generate_workload,
    hint_space_size,
    load_workload,
    random_tree,
    save_workload,
    tree_similarity,
)
from hintopt.errors import AdapterUnavailable, ConfigError, SpaceTooLarge, UnknownQuery
from hintopt.hints import Hint, HintMode, parse_hint, tree_leaves
from hintopt.plan import extract_hint, parse_plan_json, simplify_plan, stats_from_plan

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def table_query(table, default=100.0, aliases=("a", "b", "c")):
    return SimQuery("q1", "SELECT 1", aliases, default, latency_table=table)


def engine_of(*queries, noise=0.0, timeout_ms=10_000.0):
    return SimEngine(SimWorkload({q.sql_id: q for q in queries}, noise=noise, timeout_ms=timeout_ms))


class TestExecute:
    def test_baseline(self):
        eng = engine_of(table_query({}))
        out = eng.execute(EngineRequest("q1"))
        assert out.latency_ms == 100.0
        assert not out.timed_out
        assert extract_hint(out.plan) == eng.default_plan_hint("q1")

    def test_table_lookup(self):
        eng = engine_of(table_query({"Leading (a (b c))": 40.0}))
        assert eng.execute(EngineRequest("q1", hint=parse_hint("Leading (a (b c))"))).latency_ms == 40.0

    def test_timeout(self):
        eng = engine_of(table_query({"Leading (a (b c))": 20_000.0}))
        out = eng.execute(EngineRequest("q1", hint=parse_hint("Leading (a (b c))"), timeout_ms=10_000.0))
        assert out.timed_out
        assert out.latency_ms == 10_000.0

    def test_invalid_hint_runs_default(self):
        eng = engine_of(table_query({"Leading (a b)": 1.0}))
        out = eng.execute(EngineRequest("q1", hint=parse_hint("Leading (a b)")))
        assert out.latency_ms == 100.0
        assert extract_hint(out.plan) == eng.default_plan_hint("q1")

    def test_unknown_query(self):
        with pytest.raises(UnknownQuery):
            engine_of(table_query({})).execute(EngineRequest("nope"))

    def test_non_positive_timeout(self):
        with pytest.raises(ValueError):
            EngineRequest("q1", timeout_ms=0)

    def test_noise_bounds_and_reproducibility(self):
        eng = engine_of(table_query({}), noise=0.2)
        runs = [eng.execute(EngineRequest("q1", attempt=i)).latency_ms for i in range(50)]
        assert all(80.0 <= t <= 120.0 for t in runs)
        assert len(set(runs)) > 1
        again = [eng.execute(EngineRequest("q1", attempt=i)).latency_ms for i in range(50)]
        assert runs == again

    def test_pure_without_noise(self):
        wl = generate_workload(3, 3, 4, seed=5)
        eng = SimEngine(wl)
        for sid in eng.sql_ids:
            for h in eng.enumerate_hint_space(sid)[:20]:
                a = eng.execute(EngineRequest(sid, hint=h)).latency_ms
                b = eng.execute(EngineRequest(sid, hint=parse_hint(str(h)))).latency_ms
                assert a == b


class TestCollectStats:
    def test_three_aliases(self):
        eng = SimEngine(generate_workload(1, 3, 3, seed=1))
        sid = eng.sql_ids[0]
        stats = eng.collect_stats(sid)
        assert len(stats.table_cardinalities) == 3
        assert stats == eng.collect_stats(sid)

    def test_replay_matches_fixture(self):
        eng = ReplayEngine.from_directory(FIXTURES)
        root = simplify_plan(parse_plan_json((FIXTURES / "job20a.json").read_text()))
        assert eng.collect_stats("job20a") == stats_from_plan(root)


class TestTrees:
    @pytest.mark.parametrize("n, expected", [(1, 1), (2, 2), (3, 12), (4, 120), (5, 1680), (6, 30240)])
    def test_count(self, n, expected):
        assert count_trees(n) == expected
        assert count_trees(n) == math.factorial(n) * math.comb(2 * n - 2, n - 1) // n

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_enumeration_matches_count_and_is_distinct(self, n):
        aliases = [f"t{i}" for i in range(n)]
        trees = enumerate_trees(aliases)
        assert len(trees) == count_trees(n)
        assert len(set(trees)) == len(trees)
        assert all(sorted(tree_leaves(t)) == sorted(aliases) for t in trees)

    def test_random_tree_covers_space(self):
        rng = np.random.default_rng(0)
        seen = {random_tree(["a", "b", "c"], rng) for _ in range(500)}
        assert seen == set(enumerate_trees(["a", "b", "c"]))

    def test_similarity_bounds(self):
        trees = enumerate_trees(["a", "b", "c", "d"])
        for t, u in itertools.product(trees[:30], trees[:30]):
            s = tree_similarity(t, u)
            assert 0.0 <= s <= 1.0
            assert (s == 1.0) == (t == u)


class TestHintSpace:
    def test_two_aliases(self):
        space = enumerate_hint_space(["a", "b"], HintMode.JOIN_ORDER)
        assert [str(h) for h in space] == ["Leading (a b)", "Leading (b a)"]

    def test_three_aliases(self):
        space = enumerate_hint_space(["a", "b", "c"], HintMode.JOIN_ORDER)
        assert len(space) == 12 == hint_space_size(3, "join_order")
        assert len({str(h) for h in space}) == 12

    def test_full_plan_size(self):
        space = enumerate_hint_space(["a", "b", "c"], HintMode.FULL_PLAN)
        assert len(space) == 12 * 3**2 * 3**3 == hint_space_size(3, "full_plan")

    def test_single_alias(self):
        assert [str(h) for h in enumerate_hint_space(["a"], "full_plan")] == ["SeqScan(a)", "IndexScan(a)", "BitmapScan(a)"]

    def test_too_many_aliases(self):
        with pytest.raises(SpaceTooLarge):
            enumerate_hint_space([f"t{i}" for i in range(7)], HintMode.JOIN_ORDER)

    def test_full_plan_bound(self):
        with pytest.raises(SpaceTooLarge):
            enumerate_hint_space(["a", "b", "c", "d"], HintMode.FULL_PLAN)


class TestGeneratedWorkload:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_planted_optimum(self, seed):
        eng = SimEngine(generate_workload(5, 3, 5, seed=seed))
        for sid in eng.sql_ids:
            q = eng.query(sid)
            best_hint, best = eng.oracle_best(sid, HintMode.JOIN_ORDER)
            assert best == pytest.approx(0.4 * q.default_latency_ms, rel=1e-12)
            assert eng.true_latency(sid, None) == q.default_latency_ms
            lats = [eng.true_latency(sid, h) for h in eng.enumerate_hint_space(sid)]
            assert min(lats) == best
            assert all(t >= 0.4 * q.default_latency_ms - 1e-9 for t in lats)

    def test_alias_bounds_and_determinism(self):
        a = generate_workload(10, 3, 5, seed=4)
        b = generate_workload(10, 3, 5, seed=4)
        assert a.to_json() == b.to_json()
        assert all(3 <= len(q.aliases) <= 5 for q in a.queries.values())

    def test_default_copy_rejected(self):
        h = parse_hint("SeqScan(a) SeqScan(b) HashJoin(a b) Leading (a b)")
        with pytest.raises(ConfigError):
            SimQuery("q", "x", ("a", "b"), 10.0, default_hint=h, optimal_hint=h)

    def test_file_round_trip(self, tmp_path):
        wl = generate_workload(4, 3, 4, seed=2, noise=0.1)
        save_workload(wl, tmp_path / "w.json")
        again = load_workload(tmp_path / "w.json")
        assert again.to_json() == wl.to_json()

    def test_toml_workload(self, tmp_path):
        (tmp_path / "w.toml").write_text(
            'name = "tiny"\nnoise = 0.0\ntimeout_ms = 10000.0\n'
            '[[queries]]\nsql_id = "q1"\nsql = "SELECT 1"\naliases = ["a", "b"]\n'
            'default_latency_ms = 100.0\n[queries.latency_table]\n"Leading (b a)" = 25.0\n'
        )
        eng = SimEngine(load_workload(tmp_path / "w.toml"))
        assert eng.true_latency("q1", parse_hint("Leading (b a)")) == 25.0
        assert eng.true_latency("q1", None) == 100.0


class TestReplay:
    def test_replays_recorded_plan(self):
        eng = ReplayEngine.from_directory(FIXTURES)
        assert set(eng.sql_ids) == {"agg_hashjoin", "job20a", "parallel_bushy", "single_scan"}
        out = eng.execute(EngineRequest("agg_hashjoin", hint=Hint.join_order(("b", "a"))))
        assert str(extract_hint(out.plan)) == (FIXTURES / "agg_hashjoin.hint").read_text().strip()
        assert eng.default_plan_hint("agg_hashjoin") == extract_hint(out.plan)

    def test_unknown(self):
        with pytest.raises(UnknownQuery):
            ReplayEngine.from_directory(FIXTURES).execute(EngineRequest("nope"))


class TestPostgresAdapter:
    def test_unavailable_without_driver(self):
        try:
            import importlib

            importlib.import_module("psycopg")
        except ImportError:
            with pytest.raises(AdapterUnavailable):
                PostgresEngine("postgresql://localhost/none", {"q": "SELECT 1"})
        else:  # pragma: no cover
            pytest.skip("psycopg is installed; the adapter needs a live server")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_latency_never_below_optimum(seed):
    eng = SimEngine(generate_workload(1, 3, 4, seed=seed))
    sid = eng.sql_ids[0]
    rng = np.random.default_rng(seed)
    q = eng.query(sid)
    h = Hint.join_order(random_tree(list(q.aliases), rng))
    assert 0.4 * q.default_latency_ms - 1e-9 <= eng.true_latency(sid, h)
