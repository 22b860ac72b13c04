"""Exact batch top-k scoring over a candidate pool.

Vectors are rounded to float32 and dot products accumulated in float64. Users
are processed in fixed-size blocks, so output bits do not depend on the number
of worker threads. Ties are broken by ascending item index.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

BLOCK = 256


@dataclass(frozen=True)
class RankingLog:
    """Per-user top-k lists. Rows are padded with -1 / NaN past ``lengths``."""

    k: int
    pool: np.ndarray
    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    lengths: np.ndarray

    def items_of(self, row: int) -> np.ndarray:
        return self.items[row, :self.lengths[row]]

    def scores_of(self, row: int) -> np.ndarray:
        return self.scores[row, :self.lengths[row]]

    def truncate(self, k: int) -> "RankingLog":
        """The same ranking cut at a smaller ``k``."""
        if k > self.k:
            raise ValueError(f"cannot extend a top-{self.k} log to k={k}")
        return RankingLog(k, self.pool, self.users, self.items[:, :k].copy(),
                          self.scores[:, :k].copy(), np.minimum(self.lengths, k))

    def user_lists(self) -> dict[int, np.ndarray]:
        return {int(u): self.items_of(r) for r, u in enumerate(self.users)}


@dataclass(frozen=True)
class PredictionCounts:
    """Top-k appearance count of every pool item (aligned with ``pool``)."""

    pool: np.ndarray
    counts: np.ndarray
    num_users: int

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.pool.tolist(), self.counts.tolist()))

    def __getitem__(self, item: int) -> int:
        pos = np.searchsorted(self.pool, item)
        if pos >= len(self.pool) or self.pool[pos] != item:
            raise KeyError(item)
        return int(self.counts[pos])


def _as_scoring(matrix) -> np.ndarray:
    return np.asarray(matrix, dtype=np.float32).astype(np.float64)


def _normalize_exclusions(exclusions, users):
    if exclusions is None:
        return None
    if isinstance(exclusions, dict):
        return [np.asarray(exclusions.get(int(u), ()), dtype=np.int64) for u in users]
    if len(exclusions) != len(users):
        raise ValueError("exclusions must align with users")
    return [np.asarray(e, dtype=np.int64) for e in exclusions]


def rank_topk(user_vectors, item_vectors, pool, users, k: int, exclusions=None,
              threads: int = 1) -> RankingLog:
    """Top-k items of ``pool`` for every user in ``users`` by dot product.

    ``pool`` holds row indices of ``item_vectors``; ``exclusions`` is either a
    dict ``user -> item rows`` or a sequence aligned with ``users``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    U = _as_scoring(user_vectors)
    V = _as_scoring(item_vectors)
    if U.shape[1] != V.shape[1]:
        raise DataError(f"dimension mismatch: users {U.shape[1]} vs items {V.shape[1]}")
    pool = np.unique(np.asarray(pool, dtype=np.int64))
    users = np.asarray(users, dtype=np.int64)
    if len(pool) == 0:
        raise DataError("empty candidate pool")
    if pool[0] < 0 or pool[-1] >= V.shape[0]:
        raise IndexError("pool index out of range")
    if len(users) and (users.min() < 0 or users.max() >= U.shape[0]):
        raise IndexError("user index out of range")
    Vp = V[pool]
    return _select(lambda a, b: U[users[a:b]] @ Vp.T, pool, users, k, exclusions, threads)


def rank_scores(score_matrix, pool, users, k: int, exclusions=None, threads: int = 1) -> RankingLog:
    """Top-k from precomputed scores; column ``j`` of ``score_matrix`` belongs to ``pool[j]``.

    ``pool`` must be sorted ascending.
    """
    S = np.asarray(score_matrix, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.int64)
    users = np.asarray(users, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pool) == 0:
        raise DataError("empty candidate pool")
    if np.any(np.diff(pool) <= 0):
        raise ValueError("pool must be strictly increasing")
    if S.shape != (len(users), len(pool)):
        raise DataError(f"score matrix shape {S.shape} != ({len(users)}, {len(pool)})")
    return _select(lambda a, b: S[a:b].copy(), pool, users, k, exclusions, threads)


def _select(block_scores, pool, users, k, exclusions, threads) -> RankingLog:
    excl = _normalize_exclusions(exclusions, users)
    width = min(k, len(pool))
    n = len(users)
    items = np.full((n, width), -1, dtype=np.int64)
    scores = np.full((n, width), np.nan)
    lengths = np.empty(n, dtype=np.int64)

    def run(start):
        stop = min(start + BLOCK, n)
        S = block_scores(start, stop)
        avail = np.full(stop - start, len(pool))
        if excl is not None:
            for r in range(stop - start):
                e = excl[start + r]
                if len(e):
                    cols = np.unique(np.searchsorted(pool, e[np.isin(e, pool)]))
                    S[r, cols] = -np.inf
                    avail[r] -= len(cols)
        if np.any(avail == 0):
            bad = users[start + int(np.argmax(avail == 0))]
            raise DataError(f"user {bad}: candidate pool is empty after exclusions")
        # stable sort on negated scores keeps ascending pool order among ties
        order = np.argsort(-S, axis=1, kind="stable")[:, :width]
        top = np.take_along_axis(S, order, axis=1)
        length = np.minimum(avail, width)
        mask = np.arange(width)[None, :] < length[:, None]
        items[start:stop] = np.where(mask, pool[order], -1)
        scores[start:stop] = np.where(mask, top, np.nan)
        lengths[start:stop] = length

    starts = range(0, n, BLOCK)
    if threads > 1 and n > BLOCK:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    else:
        for s in starts:
            run(s)
    return RankingLog(k, pool, users, items, scores, lengths)


def rank_of_item(user_vector, item_vectors, pool, target: int) -> int:
    """1-based rank of ``target`` within ``pool`` under the index tie-break."""
    pool = np.asarray(pool, dtype=np.int64)
    if target not in set(pool.tolist()):
        raise DataError(f"target {target} is not in the candidate pool")
    u = _as_scoring(np.asarray(user_vector).reshape(1, -1))[0]
    s = _as_scoring(item_vectors)[pool] @ u
    st = s[pool == target][0]
    return int(1 + np.sum(s > st) + np.sum((s == st) & (pool < target)))


def prediction_counts(log: RankingLog) -> PredictionCounts:
    flat = log.items[log.items >= 0]
    pos = np.searchsorted(log.pool, flat)
    counts = np.bincount(pos, minlength=len(log.pool)).astype(np.int64)
    return PredictionCounts(log.pool, counts, len(log.users))


def write_ranking_csv(path, log: RankingLog, user_labels=None, item_labels=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "rank", "item_id", "score"])
        for r, u in enumerate(log.users.tolist()):
            ulabel = user_labels[u] if user_labels is not None else u
            for rank, (i, s) in enumerate(zip(log.items_of(r).tolist(), log.scores_of(r).tolist()), start=1):
                w.writerow([ulabel, rank, item_labels[i] if item_labels is not None else i, f"{s:.6f}"])
    return path


def read_ranking_csv(path, pool=None) -> RankingLog:
    """Rebuild a log from CSV. Integer IDs are required; ``k`` is the longest list."""
    path = Path(path)
    per_user: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["user_id", "rank", "item_id", "score"]:
            raise DataError(f"{path}: header must be user_id,rank,item_id,score")
        for row in reader:
            per_user.setdefault(int(row["user_id"]), []).append(
                (int(row["rank"]), int(row["item_id"]), float(row["score"])))
    users = np.array(sorted(per_user), dtype=np.int64)
    k = max((len(v) for v in per_user.values()), default=1)
    items = np.full((len(users), k), -1, dtype=np.int64)
    scores = np.full((len(users), k), np.nan)
    lengths = np.zeros(len(users), dtype=np.int64)
    for r, u in enumerate(users.tolist()):
        entries = sorted(per_user[u])
        lengths[r] = len(entries)
        items[r, :len(entries)] = [e[1] for e in entries]
        scores[r, :len(entries)] = [e[2] for e in entries]
    if pool is None:
        pool = np.unique(items[items >= 0])
    return RankingLog(k, np.unique(np.asarray(pool, dtype=np.int64)), users, items, scores, lengths)


def write_counts_csv(path, counts: PredictionCounts, item_labels=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "count"])
        for i, c in zip(counts.pool.tolist(), counts.counts.tolist()):
            w.writerow([item_labels[i] if item_labels is not None else i, c])
    return path
