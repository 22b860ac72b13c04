import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coldpop.errors import DataError
from coldpop.ranking import (RankingLog, prediction_counts, rank_of_item, rank_scores, rank_topk, read_ranking_csv,
                             write_counts_csv, write_ranking_csv)


def _one_user(scores):
    V = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    return np.ones((1, 1)), V


class TestHandCases:
    def test_highest_scores_first(self):
        U, V = _one_user([0.9, 0.1, 0.5])
        assert rank_topk(U, V, [0, 1, 2], [0], 2).items_of(0).tolist() == [0, 2]

    def test_ties_go_to_smaller_index(self):
        U, V = _one_user([1.0, 1.0, 1.0])
        assert rank_topk(U, V, [2, 0, 1], [0], 2).items_of(0).tolist() == [0, 1]

    def test_rank_of_item_unique_max(self):
        U, V = _one_user([0.1, 0.9, 0.5])
        assert rank_of_item(U[0], V, [0, 1, 2], 1) == 1

    def test_rank_of_item_tie_with_smaller_index(self):
        U, V = _one_user([0.7, 0.7, 0.1])
        assert rank_of_item(U[0], V, [0, 1, 2], 1) == 2

    def test_rank_of_item_outside_pool(self):
        U, V = _one_user([0.7, 0.7])
        with pytest.raises(DataError):
            rank_of_item(U[0], V, [0], 1)

    def test_k_larger_than_pool(self):
        U, V = _one_user([0.3, 0.2])
        log = rank_topk(U, V, [0, 1], [0], 5)
        assert log.items_of(0).tolist() == [0, 1]
        assert log.k == 5

    def test_exclusions(self):
        U, V = _one_user([0.9, 0.8, 0.7, 0.6])
        log = rank_topk(U, V, [0, 1, 2, 3], [0], 2, exclusions={0: [0, 2, 99]})
        assert log.items_of(0).tolist() == [1, 3]

    def test_all_excluded(self):
        U, V = _one_user([0.9, 0.8])
        with pytest.raises(DataError):
            rank_topk(U, V, [0, 1], [0], 1, exclusions=[[0, 1]])

    def test_empty_pool(self):
        U, V = _one_user([0.9])
        with pytest.raises(DataError):
            rank_topk(U, V, [], [0], 1)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            rank_topk(np.ones((1, 2)), np.ones((3, 3)), [0], [0], 1)


class TestOracle:
    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 8), st.integers(1, 12), st.integers(0, 10_000))
    def test_matches_full_sort(self, n_users, n_items, d, k, seed):
        r = np.random.default_rng(seed)
        U = r.integers(-2, 3, size=(n_users, d)).astype(float)  # small integers force ties
        V = r.integers(-2, 3, size=(n_items, d)).astype(float)
        pool = np.sort(r.choice(n_items, size=r.integers(1, n_items + 1), replace=False))
        log = rank_topk(U, V, r.permutation(pool), np.arange(n_users), k)
        for u in range(n_users):
            ref = oracles.full_sort((V[pool] @ U[u]).tolist(), pool.tolist())
            assert log.items_of(u).tolist() == ref[:k]
            target = int(r.choice(pool))
            assert rank_of_item(U[u], V, pool, target) == ref.index(target) + 1

    def test_rank_scores_matches_rank_topk(self, rng):
        U, V = rng.normal(size=(20, 4)), rng.normal(size=(15, 4))
        pool = np.array([1, 3, 4, 8, 9, 14])
        a = rank_topk(U, V, pool, np.arange(20), 3)
        S = np.asarray(U, np.float32).astype(float) @ np.asarray(V[pool], np.float32).astype(float).T
        b = rank_scores(S, pool, np.arange(20), 3)
        assert np.array_equal(a.items, b.items)

    def test_rank_scores_needs_sorted_pool(self):
        with pytest.raises(ValueError):
            rank_scores(np.ones((1, 2)), [3, 1], [0], 1)


class TestDeterminism:
    def test_threads_bit_identical(self, rng):
        U, V = rng.normal(size=(1100, 8)), rng.normal(size=(300, 8))
        pool = np.arange(0, 300, 2)
        excl = [rng.choice(300, 5, replace=False) for _ in range(1100)]
        one = rank_topk(U, V, pool, np.arange(1100), 20, exclusions=excl, threads=1)
        many = rank_topk(U, V, pool, np.arange(1100), 20, exclusions=excl, threads=4)
        assert one.items.tobytes() == many.items.tobytes()
        assert one.scores.tobytes() == many.scores.tobytes()

    def test_pool_order_irrelevant(self, rng):
        U, V = rng.normal(size=(5, 3)), rng.normal(size=(12, 3))
        pool = np.arange(12)
        a = rank_topk(U, V, pool, np.arange(5), 4)
        b = rank_topk(U, V, rng.permutation(pool), np.arange(5), 4)
        assert np.array_equal(a.items, b.items)


class TestCounts:
    def _log(self, lists, pool):
        k = max(len(x) for x in lists)
        items = np.full((len(lists), k), -1)
        for r, x in enumerate(lists):
            items[r, :len(x)] = x
        return RankingLog(k, np.asarray(pool), np.arange(len(lists)), items, np.zeros(items.shape),
                          np.array([len(x) for x in lists]))

    def test_shared_item(self):
        c = prediction_counts(self._log([[7, 1], [3, 7]], [1, 3, 5, 7]))
        assert c[7] == 2 and c[5] == 0 and c[1] == 1

    def test_missing_key(self):
        with pytest.raises(KeyError):
            prediction_counts(self._log([[7]], [7]))[2]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 25), st.integers(1, 10), st.integers(0, 10_000))
    def test_conservation(self, n_users, n_items, k, seed):
        r = np.random.default_rng(seed)
        log = rank_topk(r.normal(size=(n_users, 3)), r.normal(size=(n_items, 3)), np.arange(n_items),
                        np.arange(n_users), k)
        c = prediction_counts(log)
        assert c.counts.sum() == log.lengths.sum()
        recount = {}
        for u in range(n_users):
            for i in log.items_of(u).tolist():
                recount[i] = recount.get(i, 0) + 1
        assert {i: n for i, n in c.as_dict().items() if n} == recount


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        log = rank_topk(rng.normal(size=(4, 3)), rng.normal(size=(9, 3)), np.arange(9), np.arange(4), 3)
        write_ranking_csv(tmp_path / "r.csv", log)
        back = read_ranking_csv(tmp_path / "r.csv", pool=np.arange(9))
        assert np.array_equal(back.items, log.items)
        np.testing.assert_allclose(back.scores, log.scores, atol=5e-7)

    def test_bad_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            read_ranking_csv(tmp_path / "r.csv")

    def test_counts_csv(self, tmp_path, rng):
        log = rank_topk(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), np.arange(5), np.arange(4), 2)
        write_counts_csv(tmp_path / "c.csv", prediction_counts(log))
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "item_id,count" and len(lines) == 6
        assert sum(int(x.split(",")[1]) for x in lines[1:]) == 8
