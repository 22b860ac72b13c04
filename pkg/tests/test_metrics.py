import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coldpop.data import from_pairs
from coldpop.errors import DataError
from coldpop.metrics import (ItemMdgTable, MetricReport, bottom_count, evaluate_log, gini_diversity, item_mdg_table,
                             mdg_aggregates, mdg_at_k, ndcg_at_k, recall_at_k, top_count, welch_t_test)
from coldpop.ranking import rank_scores


def _table(values, items=None):
    v = np.asarray(values, dtype=float)
    return ItemMdgTable(np.arange(len(v)) if items is None else np.asarray(items), np.ones(len(v), int), v)


class TestUserMetrics:
    def test_ndcg_rank1(self):
        assert ndcg_at_k([4, 1, 2], [4], 3) == 1.0

    def test_ndcg_rank2(self):
        assert ndcg_at_k([1, 4], [4], 2) == pytest.approx(0.63093, abs=1e-5)
        assert ndcg_at_k([1, 4], [4], 2) == 1 / math.log2(3)

    def test_ndcg_outside_cutoff(self):
        assert ndcg_at_k([1, 2, 4], [4], 2) == 0.0

    def test_recall(self):
        assert recall_at_k([1, 2, 3], [2, 9], 3) == 0.5
        assert recall_at_k([1, 2, 3], [3, 1], 3) == 1.0

    def test_recall_denominator_uncapped(self):
        assert recall_at_k([1, 2], [1, 2, 3, 4], 2) == 0.5

    def test_empty_relevant(self):
        with pytest.raises(DataError):
            ndcg_at_k([1], [], 1)


class TestMdg:
    def test_single_rank1(self):
        assert mdg_at_k([1], 5) == 1.0

    def test_ranks_1_and_3(self):
        assert mdg_at_k([1, 3], 3) == 0.75

    def test_all_missed(self):
        assert mdg_at_k([21, None], 20) == 0.0

    def test_aggregates_hand(self):
        lo, hi, everything = mdg_aggregates(_table([0, 0.2, 0.5, 0.75, 1.0]))
        assert lo == pytest.approx(0.3625)
        assert hi == 1.0
        assert everything == pytest.approx(0.49)

    def test_aggregates_constant(self):
        assert mdg_aggregates(_table([0.3] * 7)) == pytest.approx((0.3, 0.3, 0.3))

    def test_aggregates_single(self):
        assert mdg_aggregates(_table([0.42])) == (0.42, 0.42, 0.42)

    def test_ceil_counts(self):
        assert [bottom_count(n) for n in (1, 4, 5, 10, 11)] == [1, 4, 4, 8, 9]
        assert [top_count(n) for n in (1, 20, 21, 40)] == [1, 1, 2, 2]
        for n in range(1, 500):
            assert bottom_count(n) == math.ceil(0.8 * n - 1e-12)
            assert top_count(n) == math.ceil(0.05 * n - 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_aggregates_ordering(self, values):
        lo, hi, everything = mdg_aggregates(_table(values))
        assert lo <= everything + 1e-12 and everything <= hi + 1e-12


class TestGini:
    def test_uniform(self):
        assert gini_diversity([5, 5, 5]) == 1.0

    def test_concentrated(self):
        assert gini_diversity([0, 0, 0, 4]) == pytest.approx(0.25)

    def test_ramp(self):
        assert gini_diversity([1, 2, 3, 4]) == pytest.approx(0.75)

    def test_zero_item_lowers_uniform(self):
        assert gini_diversity([3, 3, 3, 0]) < 1.0

    def test_all_zero(self):
        with pytest.raises(DataError):
            gini_diversity([0, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30).filter(lambda c: sum(c) > 0))
    def test_matches_pairwise_oracle(self, counts):
        assert abs(gini_diversity(counts) - oracles.gini_diversity(counts)) < 1e-9


class TestWelch:
    def test_identical(self):
        res = welch_t_test([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
        assert res.statistic == 0.0 and res.pvalue == pytest.approx(1.0)

    def test_hand_example_against_integration(self):
        a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
        res = welch_t_test(a, b)
        t, df = oracles.welch(a, b)
        assert res.statistic == pytest.approx(-1.0) and t == pytest.approx(-1.0)
        assert res.df == pytest.approx(df) and df == pytest.approx(8.0)
        p_ref = oracles.t_two_sided_p(t, df)
        assert res.pvalue == pytest.approx(p_ref, abs=1e-7)
        assert res.pvalue == pytest.approx(0.347, abs=5e-4)

    def test_unequal_variances_against_integration(self):
        a, b = [0.1, 0.4, 0.35, 0.2, 0.9], [1.2, 1.1, 1.3, 1.25, 1.22]
        t, df = oracles.welch(a, b)
        res = welch_t_test(a, b)
        assert res.statistic == pytest.approx(t) and res.df == pytest.approx(df)
        assert res.pvalue == pytest.approx(oracles.t_two_sided_p(t, df), abs=1e-7)

    def test_zero_variance_equal_means(self):
        res = welch_t_test([2.0, 2.0], [2.0, 2.0, 2.0])
        assert res.no_difference and res.pvalue == 1.0

    def test_zero_variance_different_means(self):
        res = welch_t_test([2.0, 2.0], [3.0, 3.0])
        assert res.statistic == -math.inf and res.pvalue == 0.0 and not res.no_difference

    def test_too_small(self):
        with pytest.raises(DataError):
            welch_t_test([1.0], [1.0, 2.0])


def _random_instance(r, n_users, n_items, k):
    S = r.integers(0, 4, size=(n_users, n_items)).astype(float)  # ties on purpose
    pool = np.arange(n_items)
    pairs = [(u, i) for u in range(n_users) for i in range(n_items) if r.random() < 0.3]
    if not pairs:
        pairs = [(0, 0)]
    holdout = from_pairs(n_users, n_items, pairs)
    log = rank_scores(S, pool, np.arange(n_users), k)
    return S, pool, holdout, log


class TestOracleEquivalence:
    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 10), st.integers(1, 10), st.integers(0, 100_000))
    def test_all_metrics(self, n_users, n_items, k, seed):
        r = np.random.default_rng(seed)
        S, pool, holdout, log = _random_instance(r, n_users, n_items, k)
        ranked = {u: oracles.full_sort(S[u].tolist(), pool.tolist()) for u in range(n_users)}
        rel = {}
        for u, i in holdout.pairs.tolist():
            rel.setdefault(u, []).append(i)
        report = evaluate_log(log, holdout, k)
        users = sorted(rel)
        assert report["ndcg"] == pytest.approx(np.mean([oracles.ndcg(ranked[u], rel[u], k) for u in users]), abs=1e-9)
        assert report["recall"] == pytest.approx(
            np.mean([oracles.recall(ranked[u], rel[u], k) for u in users]), abs=1e-9)
        per_item = {}
        for i in sorted(set(holdout.items.tolist())):
            targets = [u for u in users if i in rel[u]]
            per_item[i] = oracles.mdg([ranked[u].index(i) + 1 for u in targets], k)
        table = item_mdg_table(log, holdout, k)
        assert dict(zip(table.items.tolist(), table.mdg.tolist())) == pytest.approx(per_item, abs=1e-9)
        lo, hi, everything = oracles.aggregates(per_item)
        assert (report["mdg_min80"], report["mdg_max5"], report["mdg_all"]) == pytest.approx((lo, hi, everything),
                                                                                              abs=1e-9)
        counts = [sum(i in ranked[u][:k] for u in range(n_users)) for i in pool.tolist()]
        assert report["gini_div"] == pytest.approx(oracles.gini_diversity(counts), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 10), st.integers(2, 10), st.integers(2, 10), st.integers(0, 100_000))
    def test_monotone_in_k(self, n_users, n_items, k, seed):
        r = np.random.default_rng(seed)
        _, _, holdout, log = _random_instance(r, n_users, n_items, k)
        big, small = item_mdg_table(log, holdout, k), item_mdg_table(log, holdout, k - 1)
        assert np.all(small.mdg <= big.mdg + 1e-12)
        for row in range(len(log.users)):
            rel = holdout.items[holdout.users == log.users[row]]
            if len(rel):
                ranked = log.items_of(row)
                # the ideal DCG also grows with k, so NDCG is only monotone while |rel| < k
                if len(rel) <= k - 1:
                    assert ndcg_at_k(ranked, rel, k - 1) <= ndcg_at_k(ranked, rel, k) + 1e-12
                assert recall_at_k(ranked, rel, k - 1) <= recall_at_k(ranked, rel, k)

    def test_relabeling_invariance(self, rng):
        S, pool, holdout, _ = _random_instance(rng, 8, 10, 4)
        # old item i becomes perm[i]; jitter the scores so the index tie-break plays no part
        perm = rng.permutation(10)
        inv = np.argsort(perm)
        S_cont = S + rng.uniform(0, 1e-3, size=S.shape)
        log1 = rank_scores(S_cont, pool, np.arange(8), 4)
        log2 = rank_scores(S_cont[:, inv], pool, np.arange(8), 4)
        h2 = from_pairs(8, 10, np.column_stack([holdout.users, perm[holdout.items]]))
        a, b = evaluate_log(log1, holdout, 4), evaluate_log(log2, h2, 4)
        assert a.values == pytest.approx(b.values, abs=1e-12)

    def test_no_evaluable_user(self):
        log = rank_scores(np.ones((1, 2)), [0, 1], [0], 1)
        with pytest.raises(DataError):
            evaluate_log(log, from_pairs(2, 5, [(1, 0)]), 1)


def test_report_json(tmp_path):
    r = MetricReport(20, {"ndcg": 0.5}, 3, 4, {"alpha": 1.0})
    r.write_json(tmp_path / "r.json")
    assert '"ndcg": 0.5' in (tmp_path / "r.json").read_text()
