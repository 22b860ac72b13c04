"""Plot-ready diagnostic tables for exposure bias in cold-item rankings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import io
from .data import InteractionTable, l2_normalize_rows
from .errors import DataError
from .ranking import PredictionCounts


@dataclass(frozen=True)
class DiagnosticTable:
    """Named, equal-length columns. ``title`` is written as a leading ``#`` line."""

    title: str
    columns: dict

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"column lengths differ: {sorted(lengths)}")

    def __len__(self):
        return len(next(iter(self.columns.values()), ()))

    def __getitem__(self, name):
        return self.columns[name]

    def with_column(self, name: str, values) -> "DiagnosticTable":
        return DiagnosticTable(self.title, {**self.columns, name: np.asarray(values)})

    def write_csv(self, path) -> Path:
        path = Path(path)
        names = list(self.columns)
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.title}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in zip(*(np.asarray(self.columns[n]).tolist() for n in names)):
                w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
        return path


@dataclass(frozen=True)
class ConcentrationStats:
    top_n: int
    top_n_share: float
    zero_pred_items: int
    pool_size: int
    total_slots: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _holdout_target_counts(counts: PredictionCounts, holdout: InteractionTable) -> np.ndarray:
    outside = ~np.isin(holdout.items, counts.pool)
    if np.any(outside):
        raise DataError(f"holdout references {int(outside.sum())} interactions outside the counted pool")
    pos = np.searchsorted(counts.pool, holdout.items)
    return np.bincount(pos, minlength=len(counts.pool))


def fig1_table(counts: PredictionCounts, holdout: InteractionTable) -> DiagnosticTable:
    """Prediction count against number of holdout target users, items with >= 1 target."""
    targets = _holdout_target_counts(counts, holdout)
    keep = targets >= 1
    return DiagnosticTable(
        f"fig1: top-k prediction count vs target users (pool={len(counts.pool)}, users={counts.num_users})",
        {"item_id": counts.pool[keep], "target_users": targets[keep], "pred_count": counts.counts[keep]})


def top_predicted(counts: PredictionCounts, fraction: float = 0.1) -> np.ndarray:
    """Most-predicted ``ceil(fraction * pool)`` items; ties go to the smaller index."""
    n = int(np.ceil(fraction * len(counts.pool) - 1e-9))
    order = np.lexsort((counts.pool, -counts.counts))
    return counts.pool[order[:n]]


def neighbor_popularity(cold_subset, features, warm_items, warm_popularity,
                        n_neighbors: int = 10) -> DiagnosticTable:
    """Max training popularity among each cold item's ``n_neighbors`` most cosine-similar warm items."""
    warm_items = np.asarray(warm_items, dtype=np.int64)
    warm_popularity = np.asarray(warm_popularity)
    cold_subset = np.asarray(cold_subset, dtype=np.int64)
    if len(warm_items) == 0:
        raise DataError("empty warm item set")
    if len(warm_popularity) != len(warm_items):
        raise DataError("warm_popularity must align with warm_items")
    if not 1 <= n_neighbors <= len(warm_items):
        raise DataError(f"n_neighbors must be in [1, {len(warm_items)}]")
    Fn = l2_normalize_rows(features)
    order_w = np.argsort(warm_items, kind="stable")
    warm_sorted, pop_sorted = warm_items[order_w], warm_popularity[order_w]
    sims = Fn[cold_subset] @ Fn[warm_sorted].T
    nearest = np.argsort(-sims, axis=1, kind="stable")[:, :n_neighbors]
    max_pop = pop_sorted[nearest].max(axis=1) if len(cold_subset) else np.zeros(0, dtype=pop_sorted.dtype)
    top_sim = np.take_along_axis(sims, nearest[:, :1], axis=1)[:, 0] if len(cold_subset) else np.zeros(0)
    return DiagnosticTable(
        f"fig2: max popularity among the {n_neighbors} nearest warm neighbors by content cosine",
        {"item_id": cold_subset, "neighbor_max_pop": max_pop, "nearest_similarity": top_sim})


def fig3_table(counts: PredictionCounts, cold_embeddings) -> DiagnosticTable:
    """Prediction count against embedding magnitude; embedding rows align with ``counts.pool``."""
    emb = np.asarray(cold_embeddings, dtype=np.float64)
    if emb.shape[0] != len(counts.pool):
        raise DataError(f"{emb.shape[0]} embedding rows for a pool of {len(counts.pool)}")
    return DiagnosticTable("fig3: top-k prediction count vs item vector magnitude",
                           {"item_id": counts.pool, "magnitude": np.linalg.norm(emb, axis=1),
                            "pred_count": counts.counts})


def percentile_curve(counts: PredictionCounts, label: str = "") -> DiagnosticTable:
    """Nonzero counts sorted descending; the ``i``-th row sits at percentile ``100 i / pool size``.

    Zero-count items are not emitted but still count toward the pool size.
    """
    c = np.asarray(counts.counts)
    if c.sum() <= 0:
        raise DataError("all prediction counts are zero")
    nz = np.sort(c[c > 0])[::-1]
    pct = 100.0 * np.arange(1, len(nz) + 1) / len(c)
    title = "fig4: prediction count vs prediction-count percentile (items predicted at least once)"
    return DiagnosticTable(f"{title} {label}".strip(), {"percentile": pct, "pred_count": nz})


def concentration(counts: PredictionCounts, top_n: int, k: int | None = None,
                  num_users: int | None = None) -> ConcentrationStats:
    c = np.asarray(counts.counts, dtype=np.int64)
    if not 0 < top_n <= len(c):
        raise DataError(f"top_n must be in [1, {len(c)}]")
    total = int(c.sum())
    if total == 0:
        raise DataError("all prediction counts are zero")
    if k is not None and num_users is not None and total > k * num_users:
        raise DataError("counts exceed k * num_users slots")
    top = int(np.sort(c)[::-1][:top_n].sum())
    return ConcentrationStats(top_n, top / total, int(np.sum(c == 0)), len(c), total)


def spearman(xs, ys) -> float:
    """Pearson correlation of midranks."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DataError("spearman needs two equal-length sequences of length >= 2")
    rx, ry = rankdata(x) - (len(x) + 1) / 2, rankdata(y) - (len(y) + 1) / 2
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if den == 0:
        raise DataError("spearman undefined: a ranking has zero variance")
    return float(np.clip(np.sum(rx * ry) / den, -1.0, 1.0))


def write_concentration(path, stats_by_alpha: dict, meta: dict | None = None) -> Path:
    return io.write_json(path, {"meta": meta or {}, "by_alpha": {
        str(a): s.to_json() for a, s in stats_by_alpha.items()}})
