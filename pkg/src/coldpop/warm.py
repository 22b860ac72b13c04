"""Reference warm model: bias-free matrix factorization trained with BPR.

Scores are plain dot products, so any popularity signal the model learns has to
live in the embedding magnitudes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from . import io
from .data import InteractionTable
from .errors import ConfigError, DataError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BprConfig:
    latent_dim: int = 16
    learning_rate: float = 0.05
    l2_lambda: float = 1e-4
    epochs: int = 25
    negatives_per_positive: int = 1
    init_scale: float = 0.1
    seed: int = 0
    early_stopping: bool = False
    patience: int = 5

    def validate(self) -> "BprConfig":
        if self.latent_dim <= 0 or self.negatives_per_positive <= 0 or self.patience <= 0:
            raise ConfigError("latent_dim, negatives_per_positive and patience must be positive")
        if self.learning_rate <= 0 or self.init_scale <= 0:
            raise ConfigError("learning_rate and init_scale must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        return self


@dataclass(frozen=True)
class FactorModel:
    """User and item embeddings; ``items[r]`` is the global item index of row ``r``."""

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    items: np.ndarray

    @property
    def latent_dim(self) -> int:
        return self.user_embeddings.shape[1]

    def item_rows(self, num_items: int) -> np.ndarray:
        pos = np.full(num_items, -1, dtype=np.int64)
        pos[self.items] = np.arange(len(self.items))
        return pos

    def item_magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.item_embeddings, axis=1)


def bpr_loss(score_pos, score_neg, l2_term=0.0, l2_lambda=0.0):
    """``-log sigmoid(pos - neg) + l2_lambda * l2_term``; saturates to 0, never -inf."""
    return np.logaddexp(0.0, -(np.asarray(score_pos) - np.asarray(score_neg))) + l2_lambda * l2_term


def bpr_triple_gradients(u, i, j, l2_lambda):
    """Loss and gradients for one (user, positive, negative) triple.

    The L2 term is ``|u|^2 + |i|^2 + |j|^2``.
    """
    u, i, j = (np.asarray(v, dtype=np.float64) for v in (u, i, j))
    x = u @ (i - j)
    loss = float(bpr_loss(x, 0.0, u @ u + i @ i + j @ j, l2_lambda))
    g = -_sigmoid(-x)
    return (loss,
            g * (i - j) + 2 * l2_lambda * u,
            g * u + 2 * l2_lambda * i,
            -g * u + 2 * l2_lambda * j)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@numba.njit(cache=True)
def _sgd_epoch(U, V, users, pos, neg, lr, lam):
    # returns the first step whose score gap is non-finite, or -1
    d = U.shape[1]
    n_neg = neg.shape[1]
    gu = np.empty(d)
    for t in range(users.shape[0]):
        u = users[t]
        i = pos[t]
        for s in range(n_neg):
            j = neg[t, s]
            x = 0.0
            for k in range(d):
                x += U[u, k] * (V[i, k] - V[j, k])
            if not np.isfinite(x):
                return t
            g = -0.5 * (1.0 + np.tanh(-0.5 * x))
            for k in range(d):
                gu[k] = g * (V[i, k] - V[j, k]) + 2.0 * lam * U[u, k]
            for k in range(d):
                uk = U[u, k]
                V[i, k] -= lr * (g * uk + 2.0 * lam * V[i, k])
                V[j, k] -= lr * (-g * uk + 2.0 * lam * V[j, k])
                U[u, k] -= lr * gu[k]
    return -1


def sample_negatives(rng, users, n_items: int, n_neg: int, positive_keys: np.ndarray) -> np.ndarray:
    """Uniform negatives over ``range(n_items)`` excluding each user's positives.

    ``positive_keys`` is the sorted array of ``user * n_items + item`` keys.
    """
    users = np.asarray(users, dtype=np.int64)
    neg = rng.integers(0, n_items, size=(len(users), n_neg))
    base = users[:, None] * n_items
    while True:
        keys = base + neg
        hit = np.searchsorted(positive_keys, keys)
        hit = np.minimum(hit, len(positive_keys) - 1)
        bad = positive_keys[hit] == keys
        n_bad = int(bad.sum())
        if n_bad == 0:
            return neg
        neg[bad] = rng.integers(0, n_items, size=n_bad)


def init_model(num_users: int, items: np.ndarray, cfg: BprConfig, rng) -> FactorModel:
    U = rng.normal(0.0, cfg.init_scale, size=(num_users, cfg.latent_dim))
    V = rng.normal(0.0, cfg.init_scale, size=(len(items), cfg.latent_dim))
    return FactorModel(U, V, np.asarray(items, dtype=np.int64))


def train_warm(train: InteractionTable, cfg: BprConfig, warm_items=None,
               validation: InteractionTable | None = None) -> FactorModel:
    """Fit MF-BPR by per-triple SGD over seeded shuffles of the training pairs.

    ``warm_items`` lists the global indices that get item rows (default: all
    items). With ``cfg.early_stopping`` and a ``validation`` table, training
    keeps the epoch with the best Recall@20 and stops after ``cfg.patience``
    epochs without improvement.
    """
    cfg.validate()
    if len(train) == 0:
        raise DataError("training table is empty")
    items = np.arange(train.num_items) if warm_items is None else np.asarray(warm_items, dtype=np.int64)
    rows = np.full(train.num_items, -1, dtype=np.int64)
    rows[items] = np.arange(len(items))
    pos_rows = rows[train.items]
    if np.any(pos_rows < 0):
        raise DataError("training pairs reference items without a warm row")
    if len(items) < 2:
        raise DataError("need at least two warm items for negative sampling")

    rng = np.random.default_rng(cfg.seed)
    model = init_model(train.num_users, items, cfg, rng)
    U, V = model.user_embeddings, model.item_embeddings
    n_rows = len(items)
    positive_keys = np.unique(train.users * n_rows + pos_rows)

    track = cfg.early_stopping and validation is not None and len(validation) > 0
    best, best_score, stale = (U.copy(), V.copy()), -1.0, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        users = train.users[order]
        pos = pos_rows[order]
        neg = sample_negatives(rng, users, n_rows, cfg.negatives_per_positive, positive_keys)
        step = _sgd_epoch(U, V, users, pos, neg, cfg.learning_rate, cfg.l2_lambda)
        if step >= 0 or not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            where = f"step {step}" if step >= 0 else "end of epoch"
            raise NumericalError(f"BPR diverged at epoch {epoch}, {where}; lower learning_rate or raise l2_lambda")
        if track:
            score = _validation_recall(model, train, validation, k=20)
            log.debug("epoch %d val recall@20 %.5f", epoch, score)
            if score > best_score:
                best, best_score, stale = (U.copy(), V.copy()), score, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if track:
        U[...], V[...] = best
    return model


def _validation_recall(model: FactorModel, train: InteractionTable, holdout: InteractionTable, k: int) -> float:
    from .metrics import recall_at_k
    from .ranking import rank_topk

    rows = model.item_rows(train.num_items)
    users = np.unique(holdout.users)
    seen = train.items_by_user()
    users = users[[len(seen[u]) > 0 for u in users]]
    if len(users) == 0:
        return 0.0
    exclusions = {int(u): rows[seen[u]] for u in users}
    log_ = rank_topk(model.user_embeddings, model.item_embeddings, np.arange(len(model.items)),
                     users, k, exclusions=exclusions)
    relevant = holdout.items_by_user()
    vals = []
    for r, u in enumerate(users):
        rel = rows[relevant[u]]
        rel = rel[rel >= 0]
        if len(rel):
            vals.append(recall_at_k(log_.items_of(r), rel, k))
    return float(np.mean(vals)) if vals else 0.0


def score_warm(model: FactorModel, user: int, items) -> np.ndarray:
    """Dot-product scores of ``user`` against item rows ``items``."""
    items = np.asarray(items, dtype=np.int64)
    if not 0 <= user < model.user_embeddings.shape[0]:
        raise IndexError(f"user {user} out of range")
    if len(items) and (items.min() < 0 or items.max() >= model.item_embeddings.shape[0]):
        raise IndexError("item row out of range")
    return model.item_embeddings[items] @ model.user_embeddings[user]


def save_model(directory, model: FactorModel, cfg: BprConfig, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    io.write_emb(directory / "users.emb", model.user_embeddings)
    io.write_emb(directory / "items.emb", model.item_embeddings)
    meta = {"kind": "mf_bpr", "files": ["users.emb", "items.emb"], "config": asdict(cfg),
            "seed": cfg.seed, "items": model.items}
    meta.update(extra or {})
    return io.write_json(directory / "model.json", meta)


def load_model(directory) -> tuple[FactorModel, BprConfig]:
    import json

    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    model = FactorModel(io.read_emb(directory / "users.emb").astype(np.float64),
                        io.read_emb(directory / "items.emb").astype(np.float64),
                        np.asarray(meta["items"], dtype=np.int64))
    return model, BprConfig(**meta["config"])
