"""Prompt assembly, the gain formula and the self-evolving update."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintopt.errors import MissingBaseline, SelfReference, ZeroBaseline
from hintopt.hints import Hint
from hintopt.plan import PlanStats
from hintopt.prompts import (
    QUERY_PREAMBLE,
    REGULATIONS,
    SYSTEM_PROMPT,
    BestSoFarSection,
    PromptBundle,
    ReferencesSection,
    RegulationsSection,
    StatsSection,
    build_prompt,
    compute_gain,
    evolve_prompt,
    format_gain,
)
from hintopt.store import RecordStore

H1 = Hint.join_order(("a", ("b", "c")))
H2 = Hint.join_order((("a", "b"), "c"))
STATS = PlanStats({"a": 100.0, "b": 20.0}, {"a": 0.5})


def store_with_refs():
    store = RecordStore(dim=32)
    store.record_outcome("other", "SELECT * FROM a JOIN b", 0, H2, 80.0)
    store.record_outcome("q", "SELECT * FROM a JOIN b JOIN c", 0, H1, 100.0)
    return store


class TestBuildPrompt:
    def test_first_iteration_sections(self):
        store = store_with_refs()
        refs = store.retrieve_references("SELECT * FROM a JOIN b JOIN c", "q", 1)
        bundle = build_prompt(("q", "SELECT * FROM a JOIN b JOIN c"), refs, STATS)
        assert bundle.section_names == ["References", "Stats", "Regulations"]
        assert len(bundle.section(ReferencesSection).items) == 1

    def test_best_so_far_gain_text(self):
        bundle = build_prompt(("q", "SELECT 1"), [], STATS, best=(H1, compute_gain(100, 60)))
        assert bundle.section_names == ["Stats", "BestSoFar", "Regulations"]
        assert "gain: 40.00%" in bundle.rendered

    def test_no_refs_omits_section(self):
        bundle = build_prompt(("q", "SELECT 1"), [], STATS)
        assert bundle.section(ReferencesSection) is None
        assert "## References" not in bundle.rendered

    def test_self_reference(self):
        store = store_with_refs()
        with pytest.raises(SelfReference):
            build_prompt(("q", "SELECT 1"), [store.best("q")], STATS)

    def test_regulations_always_present(self):
        bundle = build_prompt(("q", "SELECT 1"), [], STATS)
        assert bundle.sections[-1] == RegulationsSection()
        for line in REGULATIONS:
            assert line in bundle.user_prompt

    def test_section_order_enforced(self):
        with pytest.raises(ValueError):
            PromptBundle("SELECT 1", (RegulationsSection(), StatsSection(STATS)))
        with pytest.raises(ValueError):
            PromptBundle("SELECT 1", (StatsSection(STATS), StatsSection(STATS)))

    def test_exact_rendering(self):
        store = store_with_refs()
        refs = store.retrieve_references("SELECT * FROM a JOIN b JOIN c", "q", 1)
        bundle = build_prompt(("q", "SELECT * FROM a JOIN b JOIN c"), refs, STATS, best=(H1, -0.25))
        expected = (
            f"{SYSTEM_PROMPT}\n\n"
            f"{QUERY_PREAMBLE}\n## Query\nSELECT * FROM a JOIN b JOIN c\n\n"
            "## References\nReference 1:\nSQL: SELECT * FROM a JOIN b\nHint: Leading ((a b) c)\nLatency: 80.00 ms\n\n"
            "## Stats\nTable cardinalities:\na: 100\nb: 20\nFilter selectivities:\na: 0.5000\n\n"
            "## BestSoFar\nHint: Leading (a (b c))\ngain: -25.00% (worse than baseline)\n\n"
            "## Regulations\n" + "\n".join(REGULATIONS) + "\n"
        )
        assert bundle.rendered == expected

    def test_deterministic(self):
        store = store_with_refs()
        refs = store.retrieve_references("SELECT 1", "q", 3)
        a = build_prompt(("q", "SELECT 1"), refs, STATS, best=(H1, 0.1)).rendered
        b = build_prompt(("q", "SELECT 1"), list(refs), STATS, best=(H1, 0.1)).rendered
        assert a == b


class TestGain:
    def test_example(self):
        assert compute_gain(100, 60) == pytest.approx(0.4)

    def test_equal(self):
        assert compute_gain(100, 100) == 0.0

    def test_worse(self):
        assert compute_gain(100, 150) < 0

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            compute_gain(0, 10)

    @pytest.mark.parametrize("eta, text", [(0.4, "gain: 40.00%"), (0.0, "gain: 0.00%"),
                                           (-0.125, "gain: -12.50% (worse than baseline)")])
    def test_format(self, eta, text):
        assert format_gain(eta) == text


class TestEvolve:
    def test_requires_baseline(self):
        with pytest.raises(MissingBaseline):
            evolve_prompt(None, RecordStore(dim=8), ("q", "SELECT 1"), 1)

    def test_better_outcome_updates_best(self):
        store = store_with_refs()
        bundle = evolve_prompt((H2, 50.0), store, ("q", "SELECT * FROM a JOIN b JOIN c"), 1, STATS)
        best = bundle.section(BestSoFarSection)
        assert best.hint == H2
        assert best.gain == pytest.approx(0.5)
        assert bundle.iteration == 2

    def test_worse_outcome_keeps_best(self):
        store = store_with_refs()
        q = ("q", "SELECT * FROM a JOIN b JOIN c")
        first = evolve_prompt((H2, 50.0), store, q, 1, STATS).section(BestSoFarSection)
        second = evolve_prompt((H1, 70.0), store, q, 2, STATS).section(BestSoFarSection)
        assert second == first

    def test_never_embeds_own_record(self):
        store = store_with_refs()
        bundle = evolve_prompt((H2, 50.0), store, ("q", "SELECT * FROM a JOIN b JOIN c"), 1, STATS)
        refs = bundle.section(ReferencesSection)
        assert refs is not None and all(r.sql_id != "q" for r in refs.items)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1.0, 500.0, allow_nan=False), min_size=10, max_size=10))
    def test_gain_non_decreasing(self, lats):
        store = store_with_refs()
        q = ("q", "SELECT * FROM a JOIN b JOIN c")
        gains = []
        for it, t in enumerate(lats, start=1):
            gains.append(evolve_prompt((H2, t), store, q, it, STATS).section(BestSoFarSection).gain)
        assert all(b >= a for a, b in zip(gains, gains[1:]))
