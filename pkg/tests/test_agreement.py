import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xai_concord.agreement import (
    ABS_SUM,
    SIGNED_SUM,
    AgreementError,
    AgreementReport,
    ExpertSet,
    GlobalExplanation,
    TopList,
    aggregate_global,
    canonical_name,
    expert_concordance,
    feature_agreement,
    pairwise_report,
    rank_agreement,
    top_n,
)
from xai_concord.explainers import SHAPLEY_EXACT, AttributionMatrix
from xai_concord.fixtures import EXPERT_SETS, L1, TABLE1, feature_space, table1_globals, table1_report

NAMES = ("a", "b", "c", "d", "e", "f")

TABLE1_PAIRS = {
    "RA30": {("S", "L"): (0.6, 0.2), ("S", "D"): (0.2, 0.2), ("L", "D"): (0.4, 0.2)},
    "VS": {("S", "L"): (0.4, 0.4), ("S", "D"): (0.4, 0.2), ("L", "D"): (0.2, 0.0)},
}


def glob(scores, label="g", names=None, mode=ABS_SUM):
    return GlobalExplanation(label, scores, names or NAMES[: len(scores)], mode)


class TestAggregate:
    def test_single_row(self):
        g = aggregate_global(AttributionMatrix([[1.0, -3.0, 2.0]], [0.0], SHAPLEY_EXACT, ("p", "q", "r")))
        assert g.scores.tolist() == [1.0, 3.0, 2.0]
        assert [g.feature_names[i] for i in g.ranking] == ["q", "r", "p"]

    def test_signed_cancellation(self):
        r = [0.5, -2.0, 1.0]
        g = aggregate_global(AttributionMatrix([r, [-v for v in r]], [0.0, 0.0], SHAPLEY_EXACT), SIGNED_SUM)
        assert g.scores.tolist() == [0.0, 0.0, 0.0]
        assert g.ranking.tolist() == [0, 1, 2]

    def test_signed_ranks_by_magnitude(self):
        g = glob([1.0, -5.0, 3.0], mode=SIGNED_SUM)
        assert g.ranking.tolist() == [1, 2, 0]

    def test_matches_brute_force(self, rng):
        V = rng.normal(size=(40, 6))
        g = aggregate_global(AttributionMatrix(V, np.zeros(40), SHAPLEY_EXACT))
        brute = [sum(abs(V[i, j]) for i in range(40)) for j in range(6)]
        np.testing.assert_allclose(g.scores, brute, rtol=0, atol=1e-12)

    def test_row_permutation_invariant(self, rng):
        V = rng.normal(size=(30, 4))
        a = aggregate_global(AttributionMatrix(V, np.zeros(30), SHAPLEY_EXACT))
        b = aggregate_global(AttributionMatrix(V[rng.permutation(30)], np.zeros(30), SHAPLEY_EXACT))
        np.testing.assert_allclose(a.scores, b.scores, rtol=1e-14)
        assert a.ranking.tolist() == b.ranking.tolist()

    def test_errors(self):
        with pytest.raises(AgreementError, match="empty"):
            aggregate_global(AttributionMatrix(np.zeros((0, 2)), [], SHAPLEY_EXACT))
        with pytest.raises(AgreementError, match="mode"):
            aggregate_global(AttributionMatrix([[1.0]], [0.0], SHAPLEY_EXACT), "median")


class TestTopN:
    def test_tie_broken_by_index(self):
        assert top_n(glob([5.0, 5.0, 1.0]), 2).entries == ("a", "b")

    def test_n_at_least_d(self):
        t = top_n(glob([1.0, 3.0, 2.0]), 10)
        assert t.entries == ("b", "c", "a") and t.size == 3 and t.n == 10

    def test_rejects_zero(self):
        with pytest.raises(AgreementError):
            top_n(glob([1.0]), 0)

    def test_table1_rank_one_unanimous(self):
        for g in table1_globals("RA30"):
            assert top_n(g, 1).entries == ("Prev. inpat. stay count",)


class TestMetrics:
    @pytest.mark.parametrize(
        "a, b, fa, ra",
        [
            (("a", "b", "c"), ("a", "b", "c"), 1.0, 1.0),
            (("a", "b", "c"), ("d", "e", "f"), 0.0, 0.0),
            (("a", "b", "c"), ("c", "b", "a"), 1.0, 1 / 3),
            (("a", "b", "c"), ("b", "a", "d"), 2 / 3, 0.0),
        ],
    )
    def test_examples(self, a, b, fa, ra):
        ta, tb = TopList(3, a), TopList(3, b)
        assert feature_agreement(ta, tb) == pytest.approx(fa, abs=1e-15)
        assert rank_agreement(ta, tb) == pytest.approx(ra, abs=1e-15)

    def test_mismatched_n(self):
        with pytest.raises(AgreementError, match="different n"):
            feature_agreement(TopList(2, ("a", "b")), TopList(3, ("a", "b", "c")))
        with pytest.raises(AgreementError, match="different n"):
            rank_agreement(TopList(2, ("a", "b")), TopList(3, ("a", "b", "c")))

    def test_toplist_invariants(self):
        with pytest.raises(AgreementError, match="distinct"):
            TopList(2, ("a", "a"))
        with pytest.raises(AgreementError):
            TopList(1, ("a", "b"))

    def test_expert_concordance_examples(self):
        t = TopList(3, ("a", "b", "c"))
        assert expert_concordance(t, ExpertSet({"a", "b", "c", "z"})) == 1.0
        assert expert_concordance(t, ExpertSet({"z"})) == 0.0
        assert expert_concordance(t, ExpertSet({"  B "})) == pytest.approx(1 / 3)

    @pytest.mark.parametrize(
        "raw, canon",
        [("Age", "age"), ("  Prev.   inpat.\tstay count ", "prev. inpat. stay count"), ("SpO2", "spo2")],
    )
    def test_canonical_name(self, raw, canon):
        assert canonical_name(raw) == canon

    def test_squared_term_is_not_its_base(self):
        t = TopList(2, ("Prev. inpat. stay count ²", "Age"))
        assert expert_concordance(t, ExpertSet({"Prev. inpat. stay count"})) == 0.0

    def test_expert_set_validation(self):
        with pytest.raises(AgreementError, match="zzz"):
            ExpertSet({"zzz"}).validate(["a", "b"])
        ExpertSet({" A"}).validate(["a", "b"])


class TestTable1Fixture:
    @pytest.mark.parametrize("study", ["RA30", "VS"])
    def test_pairs_at_five(self, study):
        report = table1_report(study)
        for (a, b), (fa, ra) in TABLE1_PAIRS[study].items():
            p = report.lookup(a, b, 5)
            assert Fraction(p.fa).limit_denominator(5) == Fraction(fa).limit_denominator(5)
            assert Fraction(p.ra).limit_denominator(5) == Fraction(ra).limit_denominator(5)
            assert p.fa == fa and p.ra == ra

    def test_unanimity(self):
        assert table1_report("RA30").top_feature_unanimous
        assert not table1_report("VS").top_feature_unanimous

    def test_l1_expert_concordance(self):
        assert table1_report("RA30").concordance_for(L1, 5) == 0.2

    def test_printed_spelling_would_break_the_fixture(self):
        # with the table's "Prev. input." spelling the L1 lead no longer matches
        cols = dict(TABLE1["RA30"])
        cols[L1] = ("Prev. input. stay count",) + cols[L1][1:]
        space = feature_space("RA30") + ("Prev. input. stay count",)
        gs = [GlobalExplanation.from_ranking(k, cols[k], space) for k in ("S", "L", "D")]
        report = pairwise_report(gs, [5])
        assert report.lookup("S", "L", 5).fa == 0.4
        assert not report.top_feature_unanimous

    def test_pair_order_and_count(self):
        report = table1_report("VS", [1, 3, 5])
        assert [(p.pair, p.n) for p in report.pairs] == [
            (pair, n) for n in (1, 3, 5) for pair in ("SL", "SD", "LD")
        ]

    def test_expert_sets_resolve(self):
        for study in TABLE1:
            ExpertSet(frozenset(EXPERT_SETS[study])).validate(feature_space(study))


class TestReport:
    def test_self_agreement(self):
        g = glob([3.0, 1.0, 2.0, 0.5], "A")
        h = GlobalExplanation("B", g.scores, g.feature_names)
        report = pairwise_report([g, h], [1, 2, 4, 9])
        assert all(p.fa == 1.0 and p.ra == 1.0 for p in report.pairs)

    def test_three_globals_three_pairs(self, rng):
        gs = [glob(rng.normal(size=6), lab) for lab in "XYZ"]
        report = pairwise_report(gs, [2, 4])
        assert len([p for p in report.pairs if p.n == 2]) == 3

    def test_feature_space_mismatch(self):
        with pytest.raises(AgreementError, match="feature space"):
            pairwise_report([glob([1.0, 2.0], "A"), glob([1.0, 2.0], "B", ("x", "y"))], [1])

    def test_needs_two(self):
        with pytest.raises(AgreementError, match="two"):
            pairwise_report([glob([1.0], "A")], [1])

    def test_boundary_ties_reported(self):
        # A ties at positions 1-2, which matters for both n=1 (membership) and n=2 (order)
        report = pairwise_report([glob([2.0, 2.0, 1.0], "A"), glob([3.0, 2.0, 1.0], "B")], [1, 2, 3])
        assert report.metadata["ties"] == [{"method": "A", "n": 1}, {"method": "A", "n": 2}, {"method": "A", "n": 3}]
        clean = pairwise_report([glob([3.0, 2.0, 1.0], "A"), glob([1.0, 2.0, 3.0], "B")], [1, 2])
        assert clean.metadata["ties"] == []

    def test_json_round_trip(self, tmp_path):
        report = table1_report("RA30")
        doc = json.loads(report.write_json(tmp_path / "r.json").read_text())
        back = AgreementReport.from_dict(doc)
        assert back.to_dict() == report.to_dict()

    def test_csv_long_format(self):
        text = table1_report("VS", [5]).to_csv_text().splitlines()
        assert text[0] == "pair,n,metric,value"
        assert "LD,5,RA,0.0" in text
        assert "SL,5,FA,0.4" in text
        assert len(text) == 1 + 3 * 2 + 3

    def test_from_dict_rejects_other_schema(self):
        with pytest.raises(AgreementError):
            AgreementReport.from_dict({"schema": "x", "version": 1})



@st.composite
def two_globals(draw):
    d = draw(st.integers(1, 10))
    names = tuple("abcdefghij"[:d])
    sc = st.lists(st.floats(-100, 100, allow_nan=False), min_size=d, max_size=d)
    return glob(draw(sc), "A", names), glob(draw(sc), "B", names), draw(st.integers(1, 12))


@settings(max_examples=200, deadline=None)
@given(two_globals())
def test_metric_properties(case):
    a, b, n = case
    ta, tb = top_n(a, n), top_n(b, n)
    fa, ra = feature_agreement(ta, tb), rank_agreement(ta, tb)
    assert fa == feature_agreement(tb, ta) and ra == rank_agreement(tb, ta)
    assert ra <= fa
    assert feature_agreement(ta, ta) == rank_agreement(ta, ta) == 1.0
    k = ta.size
    assert any(abs(fa - i / k) < 1e-12 for i in range(k + 1))
    assert any(abs(ra - i / k) < 1e-12 for i in range(k + 1))


@settings(max_examples=200, deadline=None)
@given(two_globals(), st.floats(1e-3, 1e3))
def test_positive_scaling_invariance(case, c):
    a, b, n = case
    assert top_n(a.scaled(c), n).entries == top_n(a, n).entries
    r1 = pairwise_report([a, b], [n])
    r2 = pairwise_report([a.scaled(c), b], [n])
    assert r1.to_dict()["pairs"] == r2.to_dict()["pairs"]
