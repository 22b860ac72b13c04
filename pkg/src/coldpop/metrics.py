"""User accuracy (NDCG, Recall), item fairness (MDG family), exposure (Gini-Diversity)
and run-level significance testing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import io
from .data import InteractionTable
from .errors import DataError
from .ranking import RankingLog, prediction_counts

METRIC_NAMES = ("ndcg", "recall", "mdg_min80", "mdg_max5", "mdg_all", "gini_div")


def _discount(ranks) -> np.ndarray:
    return 1.0 / np.log2(1.0 + np.asarray(ranks, dtype=np.float64))


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        raise DataError("NDCG needs at least one relevant item")
    top = list(np.asarray(ranked).tolist())[:k]
    hits = [r for r, item in enumerate(top, start=1) if item in relevant]
    dcg = float(np.sum(_discount(hits))) if hits else 0.0
    idcg = float(np.sum(_discount(np.arange(1, min(k, len(relevant)) + 1))))
    return dcg / idcg


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        raise DataError("Recall needs at least one relevant item")
    top = set(list(np.asarray(ranked).tolist())[:k])
    return len(top & relevant) / len(relevant)


def mdg_at_k(ranks, k: int) -> float:
    """Mean discounted gain of one item over its target users.

    ``ranks`` holds the item's 1-based rank for each target user; ``None`` or
    values above ``k`` count as misses.
    """
    r = np.array([np.inf if v is None else v for v in ranks], dtype=np.float64)
    if len(r) == 0:
        raise DataError("MDG needs at least one target user")
    gains = np.where(r <= k, _discount(np.where(r <= k, r, 1.0)), 0.0)
    return float(gains.mean())


@dataclass(frozen=True)
class ItemMdgTable:
    items: np.ndarray
    num_target_users: np.ndarray
    mdg: np.ndarray

    def __len__(self):
        return len(self.items)

    def write_csv(self, path, item_labels=None) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item_id", "num_target_users", "mdg"])
            for i, n, v in zip(self.items.tolist(), self.num_target_users.tolist(), self.mdg.tolist()):
                w.writerow([item_labels[i] if item_labels is not None else i, n, repr(v)])
        return path


def bottom_count(n: int) -> int:
    return (8 * n + 9) // 10  # ceil(0.8 n) without float rounding


def top_count(n: int) -> int:
    return (n + 19) // 20  # ceil(0.05 n)


def mdg_aggregates(table: ItemMdgTable) -> tuple[float, float, float]:
    """(mean of worst-served 80%, mean of best-served 5%, overall mean)."""
    n = len(table)
    if n == 0:
        raise DataError("empty MDG table")
    order = np.lexsort((table.items, table.mdg))
    v = table.mdg[order]
    return float(v[:bottom_count(n)].mean()), float(v[n - top_count(n):].mean()), float(v.mean())


def gini_diversity(counts) -> float:
    """One minus the Gini coefficient of per-item prediction counts (zeros included)."""
    c = np.sort(np.asarray(getattr(counts, "counts", counts), dtype=np.float64))
    total = c.sum()
    if c.size == 0 or total <= 0:
        raise DataError("Gini-Diversity needs a positive total count")
    n = c.size
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    return float(1.0 - np.sum(weights * c) / (n * total))


def item_mdg_table(log: RankingLog, holdout: InteractionTable, k: int | None = None) -> ItemMdgTable:
    """MDG@k of every pool item with at least one evaluated target user."""
    k = log.k if k is None else k
    pool = log.pool
    row_of_user = {int(u): r for r, u in enumerate(log.users)}
    in_pool = np.isin(holdout.items, pool)
    evaluated = np.isin(holdout.users, log.users)
    mask = in_pool & evaluated
    h_users, h_items = holdout.users[mask], holdout.items[mask]

    # rank lookup keyed by (log row, item)
    width = min(k, log.items.shape[1])
    rows = np.repeat(np.arange(len(log.users)), width)
    ranks = np.tile(np.arange(1, width + 1), len(log.users))
    flat = log.items[:, :width].ravel()
    keep = flat >= 0
    span = int(max(pool.max(), holdout.num_items)) + 1
    keys = rows[keep] * span + flat[keep]
    order = np.argsort(keys)
    keys, ranks = keys[order], ranks[keep][order]

    q = np.array([row_of_user[int(u)] for u in h_users], dtype=np.int64) * span + h_items
    pos = np.searchsorted(keys, q)
    pos_c = np.minimum(pos, max(len(keys) - 1, 0))
    found = (pos < len(keys)) & (keys[pos_c] == q) if len(keys) else np.zeros(len(q), bool)
    gain = np.zeros(len(q))
    gain[found] = _discount(ranks[pos_c[found]])

    items, inv = np.unique(h_items, return_inverse=True)
    n_users = np.bincount(inv, minlength=len(items))
    total = np.bincount(inv, weights=gain, minlength=len(items))
    return ItemMdgTable(items, n_users, total / np.maximum(n_users, 1))


@dataclass
class MetricReport:
    k: int
    values: dict
    num_users: int
    num_items: int
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def to_json(self) -> dict:
        return {"k": self.k, "values": self.values, "num_users": self.num_users,
                "num_items": self.num_items, "meta": self.meta}

    def write_json(self, path) -> Path:
        return io.write_json(path, self.to_json())


def evaluate_log(log: RankingLog, holdout: InteractionTable, k: int | None = None,
                 meta: dict | None = None) -> MetricReport:
    """All six metrics for one ranking log against a holdout table.

    Users without a relevant pool item are skipped for NDCG/Recall; Gini is
    computed over the whole pool.
    """
    k = log.k if k is None else k
    if k < log.k:
        log = log.truncate(k)
    pool_set = set(log.pool.tolist())
    relevant = holdout.items_by_user()
    ndcgs, recalls = [], []
    for r, u in enumerate(log.users.tolist()):
        rel = [i for i in relevant[u].tolist() if i in pool_set]
        if not rel:
            continue
        ranked = log.items_of(r)
        ndcgs.append(ndcg_at_k(ranked, rel, k))
        recalls.append(recall_at_k(ranked, rel, k))
    if not ndcgs:
        raise DataError("no evaluated user has a relevant item in the pool")
    table = item_mdg_table(log, holdout, k)
    min80, max5, mdg_all = mdg_aggregates(table)
    values = {
        "ndcg": float(np.mean(ndcgs)),
        "recall": float(np.mean(recalls)),
        "mdg_min80": min80,
        "mdg_max5": max5,
        "mdg_all": mdg_all,
        "gini_div": gini_diversity(prediction_counts(log)),
    }
    return MetricReport(k, values, len(ndcgs), len(table), dict(meta or {}))


class WelchResult(NamedTuple):
    statistic: float
    pvalue: float
    df: float
    no_difference: bool = False


def welch_t_test(sample_a, sample_b) -> WelchResult:
    """Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.

    Two zero-variance samples with equal means give the ``no_difference``
    sentinel (t=0, p=1); with unequal means t is infinite and p is 0.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("Welch's test needs at least two values per sample")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        if ma == mb:
            return WelchResult(0.0, 1.0, math.nan, True)
        return WelchResult(math.copysign(math.inf, ma - mb), 0.0, math.nan)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = float(2.0 * stats.t.sf(abs(t), df))
    return WelchResult(float(t), min(p, 1.0), float(df))
