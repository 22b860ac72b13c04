import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coldpop import analysis
from coldpop.data import from_pairs
from coldpop.errors import DataError
from coldpop.ranking import PredictionCounts, RankingLog, prediction_counts, rank_topk


def _counts(values, pool=None, users=10):
    pool = np.arange(len(values)) if pool is None else np.asarray(pool)
    return PredictionCounts(pool, np.asarray(values), users)


class TestFig1:
    def test_row_and_exclusion(self):
        holdout = from_pairs(5, 4, [(0, 1), (1, 1), (2, 1), (3, 2)])
        t = analysis.fig1_table(_counts([4, 2, 0, 1]), holdout)
        assert t["item_id"].tolist() == [1, 2]
        assert t["target_users"].tolist() == [3, 1]
        assert t["pred_count"].tolist() == [2, 0]

    def test_holdout_outside_pool(self):
        with pytest.raises(DataError):
            analysis.fig1_table(_counts([1, 1], pool=[0, 1]), from_pairs(1, 5, [(0, 4)]))

    def test_projection_of_log(self, rng):
        U, V = rng.normal(size=(30, 4)), rng.normal(size=(20, 4))
        log = rank_topk(U, V, np.arange(20), np.arange(30), 5)
        pairs = [(int(u), int(i)) for u, i in zip(rng.integers(0, 30, 60), rng.integers(0, 20, 60))]
        holdout = from_pairs(30, 20, pairs)
        t = analysis.fig1_table(prediction_counts(log), holdout)
        assert len(t) == len(np.unique(holdout.items))
        for i, c in zip(t["item_id"].tolist(), t["pred_count"].tolist()):
            assert c == int(np.sum(log.items == i))


class TestNeighborPopularity:
    F = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [2.0, 1.0, 0.0]])

    def test_two_nearest(self):
        t = analysis.neighbor_popularity([3], self.F, [0, 1, 2], [10, 5, 1], n_neighbors=2)
        assert t["neighbor_max_pop"].tolist() == [10]

    def test_one_nearest(self):
        F = np.vstack([self.F, [0.1, 0.0, 1.0]])
        t = analysis.neighbor_popularity([4], F, [0, 1, 2], [10, 5, 1], n_neighbors=1)
        assert t["neighbor_max_pop"].tolist() == [1]

    def test_identical_features_have_cosine_one(self):
        F = np.vstack([self.F, [0.0, 3.0, 0.0]])
        t = analysis.neighbor_popularity([4], F, [0, 1, 2], [10, 5, 1], n_neighbors=1)
        assert t["nearest_similarity"][0] == pytest.approx(1.0)
        assert t["neighbor_max_pop"].tolist() == [5]

    def test_scale_invariant(self, rng):
        F = rng.normal(size=(30, 5))
        warm, cold = np.arange(20), np.arange(20, 30)
        pop = rng.integers(0, 50, 20)
        a = analysis.neighbor_popularity(cold, F, warm, pop, 4)
        b = analysis.neighbor_popularity(cold, F * rng.uniform(0.1, 9, size=(30, 1)), warm, pop, 4)
        assert a["neighbor_max_pop"].tolist() == b["neighbor_max_pop"].tolist()

    def test_bad_n(self):
        with pytest.raises(DataError):
            analysis.neighbor_popularity([3], self.F, [0, 1, 2], [1, 1, 1], n_neighbors=4)


class TestFig3:
    def test_magnitudes(self):
        t = analysis.fig3_table(_counts([1, 2]), np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert t["magnitude"].tolist() == [0.0, 5.0]

    def test_row_mismatch(self):
        with pytest.raises(DataError):
            analysis.fig3_table(_counts([1, 2]), np.ones((3, 2)))


class TestPercentileCurve:
    def test_hand(self):
        t = analysis.percentile_curve(_counts([4, 2, 0]))
        assert len(t) == 2
        assert t["pred_count"].tolist() == [4, 2]
        np.testing.assert_allclose(t["percentile"], [100 / 3, 200 / 3])
        assert [round(v, 1) for v in t["percentile"].tolist()] == [33.3, 66.7]

    def test_flat(self):
        assert set(analysis.percentile_curve(_counts([3, 3, 3]))["pred_count"].tolist()) == {3}

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=1, max_size=40).filter(lambda c: sum(c) > 0))
    def test_non_increasing(self, values):
        c = analysis.percentile_curve(_counts(values))["pred_count"]
        assert np.all(np.diff(c) <= 0)
        assert len(c) == sum(v > 0 for v in values)


class TestConcentration:
    def test_hand(self):
        s = analysis.concentration(_counts([4, 3, 2, 1, 0]), top_n=2)
        assert s.top_n_share == pytest.approx(0.7) and s.zero_pred_items == 1

    def test_one_item(self):
        assert analysis.concentration(_counts([0, 9, 0]), 1).top_n_share == 1.0

    def test_full_pool(self):
        assert analysis.concentration(_counts([1, 2, 3]), 3).top_n_share == 1.0

    def test_slots_exceeded(self):
        with pytest.raises(DataError):
            analysis.concentration(_counts([5, 5], users=2), 1, k=2, num_users=2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=2, max_size=40).filter(lambda c: sum(c) > 0))
    def test_share_monotone(self, values):
        shares = [analysis.concentration(_counts(values), n).top_n_share for n in range(1, len(values) + 1)]
        assert all(a <= b + 1e-12 for a, b in zip(shares, shares[1:]))

    def test_hand_built_log(self):
        # 3 users, k=2, pool 0..4: item 0 in every list, item 1 twice, item 3 once, items 2 and 4 never
        items = np.array([[0, 1], [1, 0], [3, 0]])
        log = RankingLog(2, np.arange(5), np.arange(3), items, np.zeros((3, 2)), np.array([2, 2, 2]))
        s = analysis.concentration(prediction_counts(log), 2, k=2, num_users=3)
        assert s.top_n_share == 5 / 6
        assert s.zero_pred_items == 2
        assert s.total_slots == 6


class TestTopPredicted:
    def test_ceil_and_ties(self):
        c = _counts([5, 9, 9, 1, 0, 2, 2, 2, 2, 2, 3])
        assert analysis.top_predicted(c, 0.1).tolist() == [1, 2]


class TestSpearman:
    def test_identity(self):
        assert analysis.spearman([1, 5, 2, 8], [1, 5, 2, 8]) == pytest.approx(1.0)

    def test_reversed(self):
        assert analysis.spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=25))
    def test_matches_rank_then_pearson(self, pairs):
        xs, ys = [p[0] for p in pairs], [p[1] for p in pairs]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            with pytest.raises(DataError):
                analysis.spearman(xs, ys)
            return
        assert abs(analysis.spearman(xs, ys) - oracles.spearman(xs, ys)) < 1e-9


def test_table_csv(tmp_path):
    t = analysis.DiagnosticTable("demo", {"a": np.array([1, 2]), "b": np.array([0.5, 0.25])})
    t.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines() == ["# demo", "a,b", "1,0.500000", "2,0.250000"]
    with pytest.raises(DataError):
        analysis.DiagnosticTable("bad", {"a": [1], "b": [1, 2]})
