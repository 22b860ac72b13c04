"""Content-to-embedding encoders for cold items, and the content KNN baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .data import InteractionTable, l2_normalize_rows
from .errors import ConfigError, DataError, NumericalError

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(np.float64)),
}


@dataclass(frozen=True)
class EncoderConfig:
    """``mode`` is ``"ridge"`` (closed form) or ``"mlp"`` (one hidden layer, SGD)."""

    mode: str = "ridge"
    ridge_lambda: float = 0.1
    hidden_dim: int = 64
    activation: str = "tanh"
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 64
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self) -> "EncoderConfig":
        if self.mode not in ("ridge", "mlp"):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if self.ridge_lambda < 0 or self.weight_decay < 0:
            raise ConfigError("regularization strengths must be >= 0")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if min(self.hidden_dim, self.epochs + 1, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise ConfigError("hidden_dim, batch_size, learning_rate must be positive; epochs >= 0")
        return self


@dataclass(frozen=True)
class ColdEncoder:
    weights: tuple
    config: EncoderConfig = field(default_factory=EncoderConfig)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]


def fit_ridge(features, targets, lam: float) -> np.ndarray:
    """Solve ``(F^T F + lam I) W = F^T E``."""
    F = np.asarray(features, dtype=np.float64)
    E = np.asarray(targets, dtype=np.float64)
    if F.shape[0] != E.shape[0]:
        raise DataError(f"row mismatch: {F.shape[0]} feature rows vs {E.shape[0]} embedding rows")
    if lam < 0:
        raise ConfigError("ridge lambda must be >= 0")
    gram = F.T @ F + lam * np.eye(F.shape[1])
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericalError("normal equations are singular at lambda=0; use lambda > 0")
    return np.linalg.solve(gram, F.T @ E)


def mlp_forward(W1, W2, F, activation="tanh"):
    act = _ACTIVATIONS[activation][0]
    A = F @ W1
    H = act(A)
    return A, H, H @ W2


def mlp_loss_and_grads(W1, W2, F, E, activation="tanh", weight_decay=0.0):
    """Mean squared embedding distance and its gradients w.r.t. both layers."""
    F = np.asarray(F, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    A, H, out = mlp_forward(W1, W2, F, activation)
    n = F.shape[0]
    R = out - E
    loss = float(np.sum(R * R) / n + weight_decay * (np.sum(W1 * W1) + np.sum(W2 * W2)))
    dout = 2.0 * R / n
    gW2 = H.T @ dout + 2 * weight_decay * W2
    dA = (dout @ W2.T) * _ACTIVATIONS[activation][1](A, H)
    gW1 = F.T @ dA + 2 * weight_decay * W1
    return loss, gW1, gW2


def fit_mlp(features, targets, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    F = np.asarray(features, dtype=np.float64)
    E = np.asarray(targets, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    W1 = rng.normal(0.0, 1.0 / np.sqrt(F.shape[1]), size=(F.shape[1], cfg.hidden_dim))
    W2 = rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden_dim), size=(cfg.hidden_dim, E.shape[1]))
    n = F.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g1, g2 = mlp_loss_and_grads(W1, W2, F[idx], E[idx], cfg.activation, cfg.weight_decay)
            W1 -= cfg.learning_rate * g1
            W2 -= cfg.learning_rate * g2
        if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(W2))):
            raise NumericalError(f"MLP encoder diverged at epoch {epoch}")
    return W1, W2


def fit_encoder(features_warm, embeddings_warm, lam: float | None = None,
                cfg: EncoderConfig | None = None) -> ColdEncoder:
    """Fit an encoder that maps warm-item content onto warm-item embeddings.

    ``lam`` overrides ``cfg.ridge_lambda`` in ridge mode.
    """
    cfg = (cfg or EncoderConfig()).validate()
    F = np.asarray(features_warm, dtype=np.float64)
    E = np.asarray(embeddings_warm, dtype=np.float64)
    if F.shape[0] != E.shape[0]:
        raise DataError(f"row mismatch: {F.shape[0]} feature rows vs {E.shape[0]} embedding rows")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(E))):
        raise DataError("non-finite values in encoder inputs")
    if cfg.mode == "ridge":
        return ColdEncoder((fit_ridge(F, E, cfg.ridge_lambda if lam is None else lam),), cfg)
    return ColdEncoder(fit_mlp(F, E, cfg), cfg)


def generate_cold(encoder: ColdEncoder, features_cold) -> np.ndarray:
    F = np.asarray(features_cold, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != encoder.input_dim:
        raise DataError(f"feature dim {F.shape[-1]} does not match encoder input {encoder.input_dim}")
    if len(encoder.weights) == 1:
        return F @ encoder.weights[0]
    return mlp_forward(encoder.weights[0], encoder.weights[1], F, encoder.config.activation)[2]


def save_encoder(directory, encoder: ColdEncoder, extra: dict | None = None) -> Path:
    from dataclasses import asdict

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, w in enumerate(encoder.weights):
        name = f"encoder_w{k}.emb"
        io.write_emb(directory / name, w)
        files.append(name)
    meta = {"kind": "cold_encoder", "files": files, "config": asdict(encoder.config),
            "seed": encoder.config.seed}
    meta.update(extra or {})
    return io.write_json(directory / "encoder.json", meta)


def load_encoder(directory) -> ColdEncoder:
    import json

    directory = Path(directory)
    meta = json.loads((directory / "encoder.json").read_text())
    weights = tuple(io.read_emb(directory / f).astype(np.float64) for f in meta["files"])
    return ColdEncoder(weights, EncoderConfig(**meta["config"]))


@dataclass(frozen=True)
class KnnConfig:
    """``neighbors`` is a positive count or ``"all"``."""

    neighbors: int | str = "all"
    similarity: str = "cosine"

    def validate(self) -> "KnnConfig":
        if self.similarity != "cosine":
            raise ConfigError("only cosine similarity is supported")
        if self.neighbors != "all" and (not isinstance(self.neighbors, int) or self.neighbors < 1):
            raise ConfigError("neighbors must be 'all' or a positive integer")
        return self


def knn_scores(user: int, train: InteractionTable, features, cold_pool, cfg: KnnConfig | None = None) -> np.ndarray:
    """Sum of cosine similarities between each pool item and the user's training items."""
    cfg = (cfg or KnnConfig()).validate()
    history = train.items[train.users == user]
    if len(history) == 0:
        raise DataError(f"user {user} has no training interactions")
    Fn = l2_normalize_rows(features)
    sims = Fn[np.unique(history)] @ Fn[np.asarray(cold_pool, dtype=np.int64)].T
    return _reduce_neighbors(sims, cfg.neighbors)


def _reduce_neighbors(sims: np.ndarray, neighbors) -> np.ndarray:
    if neighbors == "all" or neighbors >= sims.shape[0]:
        return sims.sum(axis=0)
    top = -np.partition(-sims, neighbors - 1, axis=0)[:neighbors]
    return top.sum(axis=0)


def knn_score_matrix(users, train: InteractionTable, features, cold_pool, cfg: KnnConfig | None = None) -> np.ndarray:
    """Batch :func:`knn_scores`: one row per user, one column per pool item."""
    cfg = (cfg or KnnConfig()).validate()
    users = np.asarray(users, dtype=np.int64)
    Fn = l2_normalize_rows(features)
    Fp = Fn[np.asarray(cold_pool, dtype=np.int64)]
    history = train.items_by_user()
    if cfg.neighbors == "all":
        profile = np.zeros((len(users), Fn.shape[1]))
        for r, u in enumerate(users):
            if len(history[u]) == 0:
                raise DataError(f"user {u} has no training interactions")
            profile[r] = Fn[history[u]].sum(axis=0)
        return profile @ Fp.T
    out = np.empty((len(users), len(Fp)))
    for r, u in enumerate(users):
        if len(history[u]) == 0:
            raise DataError(f"user {u} has no training interactions")
        out[r] = _reduce_neighbors(Fn[history[u]] @ Fp.T, cfg.neighbors)
    return out
