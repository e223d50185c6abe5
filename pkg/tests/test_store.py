"""Record store: embedding, similarity, replacement rule, retrieval and the journal."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintopt.errors import DimensionMismatch, EmptyInput, MissingBaseline, SchemaViolation, ZeroVector
from hintopt.hints import Hint, parse_hint
from hintopt.store import (
    DEFAULT_DIM,
    JOURNAL_FIELDS,
    ExecutionRecord,
    HashingEmbedder,
    RecordStore,
    ReplacementDecision,
    SimilarityMetric,
    embed,
    read_journal,
    similarity,
)

H_AB = Hint.join_order(("a", "b"))
H_BA = Hint.join_order(("b", "a"))


def scalar_score(u, v, metric):
    """Plain-Python oracle, independent of numpy vector ops."""
    dot = sum(x * y for x, y in zip(u, v))
    if metric is SimilarityMetric.INNER_PRODUCT:
        return dot
    if metric is SimilarityMetric.L2:
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(u, v)))
    return dot / (math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(y * y for y in v)))


def brute_force(records, q_vec, q_sql_id, k, metric):
    best = {}
    for rec in records:  # strict replacement: first minimum wins
        cur = best.get(rec.sql_id)
        if cur is None or rec.execution_time_ms < cur.execution_time_ms:
            best[rec.sql_id] = rec
    cands = [r for sid, r in best.items() if sid != q_sql_id]
    sign = 1 if metric is SimilarityMetric.L2 else -1
    cands.sort(key=lambda r: (sign * scalar_score(list(r.vector), list(q_vec), metric), r.id))
    return [r.id for r in cands[:k]]


class TestEmbed:
    def test_deterministic(self):
        assert np.array_equal(embed("SELECT * FROM t"), embed("SELECT * FROM t"))

    def test_unit_norm_and_dimension(self):
        v = embed("SELECT MIN(t.id) FROM title AS t WHERE t.year > 2000")
        assert v.shape == (DEFAULT_DIM,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9

    def test_trailing_whitespace_and_case_ignored(self):
        assert np.array_equal(embed("SELECT 1"), embed("SELECT 1 "))
        assert np.array_equal(embed("select 1"), embed("SELECT 1"))

    @pytest.mark.parametrize("text", ["", "   ", "\n"])
    def test_empty(self, text):
        with pytest.raises(EmptyInput):
            embed(text)

    def test_seed_changes_layout(self):
        a = HashingEmbedder(64, seed=0)("SELECT a FROM b")
        b = HashingEmbedder(64, seed=1)("SELECT a FROM b")
        assert not np.array_equal(a, b)

    @settings(max_examples=50, deadline=None)
    @given(st.text(alphabet="abcdefghij ()=.,*0123456789", min_size=1, max_size=80).filter(str.strip))
    def test_norm_property(self, text):
        assert abs(np.linalg.norm(embed(text, dim=32)) - 1.0) < 1e-9


class TestSimilarity:
    def test_identity(self):
        v = np.array([0.3, -0.4, 0.5])
        assert similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_random_pairs_match_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            u, v = rng.normal(size=16), rng.normal(size=16)
            for metric in SimilarityMetric:
                assert similarity(u, v, metric) == pytest.approx(scalar_score(u, v, metric), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            similarity(np.ones(3), np.ones(4))

    def test_zero_vector_cosine_only(self):
        with pytest.raises(ZeroVector):
            similarity(np.zeros(3), np.ones(3))
        assert similarity(np.zeros(3), np.ones(3), "l2") == pytest.approx(math.sqrt(3))
        assert similarity(np.zeros(3), np.ones(3), "inner_product") == 0.0

    def test_ranking_direction(self):
        assert SimilarityMetric.COSINE.descending
        assert SimilarityMetric.INNER_PRODUCT.descending
        assert not SimilarityMetric.L2.descending


class TestReplacement:
    def test_insert_replace_keep(self):
        store = RecordStore(dim=16)
        assert store.record_outcome("q", "SELECT 1", 0, H_AB, 60.0) is ReplacementDecision.INSERTED
        assert store.record_outcome("q", "SELECT 1", 1, H_BA, 50.0) is ReplacementDecision.REPLACED_BEST
        assert store.record_outcome("q", "SELECT 1", 2, H_AB, 60.0) is ReplacementDecision.KEPT_EXISTING
        assert store.record_outcome("q", "SELECT 1", 3, H_AB, 50.0) is ReplacementDecision.KEPT_EXISTING
        assert store.best("q").execution_time_ms == 50.0
        assert store.best("q").plan == H_BA
        assert len(store) == 4  # superseded records are retained

    def test_negative_latency(self):
        with pytest.raises(ValueError):
            RecordStore(dim=8).record_outcome("q", "SELECT 1", 0, H_AB, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=30))
    def test_best_sequence_monotone(self, lats):
        store = RecordStore(dim=8)
        bests = []
        for i, t in enumerate(lats):
            store.record_outcome("q", "SELECT 1", i, H_AB, t)
            bests.append(store.best("q").execution_time_ms)
        assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))
        assert bests[-1] == min(lats)


class TestBaseline:
    def test_after_init(self):
        store = RecordStore(dim=8)
        store.record_outcome("q", "SELECT 1", 0, H_AB, 100.0)
        out = store.get_baseline("q")
        assert out.latency_ms == 100.0
        assert not out.timed_out

    def test_before_init(self):
        with pytest.raises(MissingBaseline):
            RecordStore(dim=8).get_baseline("q")

    def test_not_evicted_by_generation(self):
        store = RecordStore(dim=8)
        store.record_outcome("q", "SELECT 1", 0, H_AB, 100.0)
        for it in range(1, 11):
            store.record_outcome("q", "SELECT 1", it, H_BA, 100.0 - it)
            assert store.get_baseline("q").latency_ms == 100.0
        assert store.best("q").execution_time_ms == 90.0
        assert store.baseline_record("q").iteration == 0


class TestRetrieval:
    def test_only_self(self):
        store = RecordStore(dim=16)
        store.record_outcome("q", "SELECT 1", 0, H_AB, 10.0)
        assert store.retrieve_references("SELECT 1", "q", 3) == []

    def test_empty_store(self):
        assert RecordStore(dim=16).retrieve_references("SELECT 1", "q", 3) == []

    def test_fewer_candidates_than_k(self):
        store = RecordStore(dim=16)
        for sid in ("a", "b", "q"):
            store.record_outcome(sid, f"SELECT {sid}", 0, H_AB, 10.0)
        assert len(store.retrieve_references("SELECT q", "q", 5)) == 2

    def test_k1_matches_linear_scan(self):
        store = RecordStore(dim=64)
        texts = {
            "x1": "SELECT * FROM title t JOIN movie_keyword mk ON t.id = mk.movie_id",
            "x2": "SELECT * FROM name n JOIN cast_info ci ON n.id = ci.person_id",
            "x3": "SELECT count(*) FROM company_name cn",
        }
        for sid, sql in texts.items():
            store.record_outcome(sid, sql, 0, H_AB, 10.0)
        q = "SELECT * FROM title t JOIN movie_keyword mk ON t.id = mk.movie_id WHERE t.year > 1990"
        qv = store.embed(q)
        expected = max(texts, key=lambda s: scalar_score(store.embed(texts[s]), qv, SimilarityMetric.COSINE))
        assert [r.sql_id for r in store.retrieve_references(q, "q", 1)] == [expected] == ["x1"]

    def test_one_record_per_sql_id_with_best_latency(self):
        store = RecordStore(dim=16)
        store.record_outcome("a", "SELECT a", 0, H_AB, 30.0)
        store.record_outcome("a", "SELECT a", 1, H_BA, 10.0)
        refs = store.retrieve_references("SELECT q", "q", 5)
        assert len(refs) == 1
        assert refs[0].execution_time_ms == 10.0

    def test_ties_break_by_lower_id(self):
        store = RecordStore(dim=4)
        v = np.array([1.0, 0.0, 0.0, 0.0])
        for sid in ("c", "a", "b"):
            store.record_outcome(sid, "x", 0, H_AB, 1.0, vector=v)
        refs = store.retrieve_references(None, "q", 3, query_vector=v)
        assert [r.sql_id for r in refs] == ["c", "a", "b"]

    @pytest.mark.parametrize("metric", list(SimilarityMetric))
    def test_brute_force_oracle(self, metric):
        rng = np.random.default_rng(11)
        store = RecordStore(dim=8)
        for i in range(300):
            sid = f"s{rng.integers(0, 60)}"
            store.record_outcome(sid, "x", i, H_AB, float(rng.uniform(1, 100)), vector=rng.normal(size=8))
        for _ in range(30):
            q_sid = f"s{rng.integers(0, 60)}"
            qv = rng.normal(size=8)
            got = [r.id for r in store.retrieve_references(None, q_sid, 5, metric, query_vector=qv)]
            assert got == brute_force(store.records, qv, q_sid, 5, metric)
            assert all(store.records[i].sql_id != q_sid for i in got)


class TestJournal:
    def test_record_json_has_seven_fields(self):
        store = RecordStore(dim=8)
        store.record_outcome("job_33b", "SELECT 1", 0, H_AB, 12.5)
        obj = store.records[0].to_json()
        assert tuple(obj) == JOURNAL_FIELDS
        assert obj["plan"] == "Leading (a b)"
        assert obj["execution_time"] == 12.5

    def test_append_and_reload(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = RecordStore(dim=16, journal_path=path)
        store.record_outcome("a", "SELECT a", 0, H_AB, 30.0)
        store.record_outcome("a", "SELECT a", 1, H_BA, 10.0)
        store.record_outcome("b", "SELECT b", 0, parse_hint("SeqScan(a) SeqScan(b) HashJoin(a b) Leading (a b)"), 5.0)
        assert len(path.read_text().splitlines()) == 3
        again = RecordStore.load(path)
        assert again.records == store.records
        assert again.best("a").execution_time_ms == 10.0
        assert again.get_baseline("a").latency_ms == 30.0

    def test_dump_round_trip(self, tmp_path):
        store = RecordStore(dim=16)
        store.record_outcome("a", "SELECT a", 0, H_AB, 30.0)
        assert store.dump(tmp_path / "d.jsonl") == 1
        assert list(read_journal(tmp_path / "d.jsonl")) == store.records

    def test_schema_violation_names_line(self, tmp_path):
        store = RecordStore(dim=4)
        store.record_outcome("a", "SELECT a", 0, H_AB, 1.0)
        good = json.dumps(store.records[0].to_json())
        bad = json.loads(good)
        del bad["plan"]
        path = tmp_path / "bad.jsonl"
        path.write_text(good + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(SchemaViolation, match="line 2"):
            list(read_journal(path))

    def test_record_equality_compares_vectors(self):
        v = np.ones(3)
        a = ExecutionRecord(0, 0, v, "a", "x", H_AB, 1.0)
        assert a == ExecutionRecord(0, 0, v.copy(), "a", "x", H_AB, 1.0)
        assert a != ExecutionRecord(0, 0, v * 2, "a", "x", H_AB, 1.0)
