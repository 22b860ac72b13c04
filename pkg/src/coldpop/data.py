"""Interaction ingestion, content feature preparation, splitting and synthetic data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class InteractionTable:
    """Deduplicated implicit-feedback pairs over contiguous user/item indices.

    ``user_ids`` / ``item_ids`` map indices back to the raw identifiers seen at
    ingestion; they are empty for synthetic tables.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise DataError("users and items must be 1-D arrays of equal length")
        if len(users):
            if users.min() < 0 or users.max() >= self.num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise DataError("item index out of range")
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def pairs(self) -> np.ndarray:
        return np.stack([self.users, self.items], axis=1)

    @property
    def popularity(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    @property
    def user_activity(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def subset(self, mask) -> "InteractionTable":
        """Rows selected by a boolean mask, keeping the index space."""
        mask = np.asarray(mask, dtype=bool)
        return InteractionTable(self.num_users, self.num_items, self.users[mask], self.items[mask],
                                self.user_ids, self.item_ids)

    def items_by_user(self) -> list[np.ndarray]:
        order = np.lexsort((self.items, self.users))
        bounds = np.searchsorted(self.users[order], np.arange(self.num_users + 1))
        items = self.items[order]
        return [items[bounds[u]:bounds[u + 1]] for u in range(self.num_users)]

    def users_by_item(self) -> list[np.ndarray]:
        order = np.lexsort((self.users, self.items))
        bounds = np.searchsorted(self.items[order], np.arange(self.num_items + 1))
        users = self.users[order]
        return [users[bounds[i]:bounds[i + 1]] for i in range(self.num_items)]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_users, self.num_items), dtype=bool)
        dense[self.users, self.items] = True
        return dense


def from_pairs(num_users: int, num_items: int, pairs) -> InteractionTable:
    """Build a table from index pairs, dropping duplicates (first occurrence kept)."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(arr):
        key = arr[:, 0] * num_items + arr[:, 1]
        _, first = np.unique(key, return_index=True)
        arr = arr[np.sort(first)]
    return InteractionTable(num_users, num_items, arr[:, 0], arr[:, 1])


def load_interactions(path) -> InteractionTable:
    """Read ``user<TAB>item`` lines; ``#`` comments and blank lines are skipped.

    IDs become contiguous indices in first-seen order and duplicate pairs are
    dropped.
    """
    path = Path(path)
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users, items = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'user_id<TAB>item_id', got {line!r}")
            u = user_index.setdefault(parts[0], len(user_index))
            i = item_index.setdefault(parts[1], len(item_index))
            if (u, i) in seen:
                continue
            seen.add((u, i))
            users.append(u)
            items.append(i)
    if not users:
        raise DataError(f"{path}: no interactions found")
    return InteractionTable(len(user_index), len(item_index), np.array(users), np.array(items),
                            tuple(user_index), tuple(item_index))


def save_interactions(path, table: InteractionTable, raw_ids: bool = False) -> Path:
    """Write a table as TSV. Indices are written unless ``raw_ids`` is set."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# users={table.num_users} items={table.num_items} pairs={len(table)}\n")
        for u, i in zip(table.users.tolist(), table.items.tolist()):
            if raw_ids and table.user_ids:
                fh.write(f"{table.user_ids[u]}\t{table.item_ids[i]}\n")
            else:
                fh.write(f"{u}\t{i}\n")
    return path


def load_index_table(path, num_users: int, num_items: int) -> InteractionTable:
    """Read a TSV of integer indices written by :func:`save_interactions`."""
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\r\n").split("\t")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: expected two integer indices") from None
    return from_pairs(num_users, num_items, pairs)


def l2_normalize_rows(matrix) -> np.ndarray:
    """Row-wise L2 normalization; all-zero rows stay zero."""
    arr = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    out = np.zeros_like(arr)
    np.divide(arr, norms, out=out, where=norms > 0)
    return out


def build_features(per_mode_matrices) -> np.ndarray:
    """Normalize every modality block row-wise, then concatenate the blocks."""
    mats = [np.asarray(m, dtype=np.float64) for m in per_mode_matrices]
    if not mats:
        raise DataError("at least one feature mode is required")
    rows = {m.shape[0] for m in mats}
    if len(rows) != 1:
        raise DataError(f"feature modes disagree on row count: {sorted(rows)}")
    for k, m in enumerate(mats):
        if m.ndim != 2:
            raise DataError(f"mode {k} is not a matrix")
        if not np.all(np.isfinite(m)):
            raise DataError(f"mode {k} contains non-finite values")
    return np.concatenate([l2_normalize_rows(m) for m in mats], axis=1)


def align_features(table: InteractionTable, features) -> np.ndarray:
    """Reorder feature rows to the table's item indices.

    When every raw item ID is a non-negative integer, the ID is taken as the
    feature row. Otherwise rows must already follow first-seen item order.
    """
    F = np.asarray(features)
    ids = table.item_ids
    if ids and all(s.isdigit() for s in ids):
        rows = np.array([int(s) for s in ids], dtype=np.int64)
        if rows.max() >= F.shape[0]:
            raise DataError(f"item id {int(rows.max())} has no feature row (features have {F.shape[0]} rows)")
        return F[rows]
    if F.shape[0] != table.num_items:
        raise DataError(f"{F.shape[0]} feature rows for {table.num_items} items")
    return F


@dataclass(frozen=True)
class DatasetSplits:
    """Item-level warm/cold partition plus the warm interaction split."""

    warm_items: np.ndarray
    cold_val_items: np.ndarray
    cold_test_items: np.ndarray
    warm_train: InteractionTable
    warm_val: InteractionTable
    warm_test: InteractionTable
    cold_val: InteractionTable
    cold_test: InteractionTable
    seed: int = 0

    @property
    def num_users(self) -> int:
        return self.warm_train.num_users

    @property
    def num_items(self) -> int:
        return self.warm_train.num_items

    def pool(self, name: str) -> np.ndarray:
        return {"warm": self.warm_items, "cold_val": self.cold_val_items,
                "cold_test": self.cold_test_items}[name]

    def holdout(self, name: str) -> InteractionTable:
        return {"warm_val": self.warm_val, "warm_test": self.warm_test,
                "cold_val": self.cold_val, "cold_test": self.cold_test}[name]

    def warm_position(self) -> np.ndarray:
        """Map global item index -> row in the warm embedding matrix (-1 for cold)."""
        pos = np.full(self.num_items, -1, dtype=np.int64)
        pos[self.warm_items] = np.arange(len(self.warm_items))
        return pos

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "warm_items": self.warm_items.tolist(),
            "cold_val_items": self.cold_val_items.tolist(),
            "cold_test_items": self.cold_test_items.tolist(),
        }


_SPLIT_TABLES = ("warm_train", "warm_val", "warm_test", "cold_val", "cold_test")


def save_splits(directory, splits: DatasetSplits) -> Path:
    """``splits.json`` with the item partition plus one index TSV per interaction split."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in _SPLIT_TABLES:
        save_interactions(directory / f"{name}.tsv", getattr(splits, name))
    path = directory / "splits.json"
    path.write_text(json.dumps(splits.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def load_splits(directory) -> DatasetSplits:
    import json

    directory = Path(directory)
    try:
        meta = json.loads((directory / "splits.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {directory / 'splits.json'}: {exc}") from None
    nu, ni = meta["num_users"], meta["num_items"]
    tables = {name: load_index_table(directory / f"{name}.tsv", nu, ni) for name in _SPLIT_TABLES}
    return DatasetSplits(np.asarray(meta["warm_items"], dtype=np.int64),
                         np.asarray(meta["cold_val_items"], dtype=np.int64),
                         np.asarray(meta["cold_test_items"], dtype=np.int64),
                         seed=meta.get("seed", 0), **tables)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(num_items: int, warm_frac: float) -> tuple[int, int, int]:
    """(warm, cold_val, cold_test) item counts; an odd cold remainder goes to validation."""
    warm = round_half_up(warm_frac * num_items)
    cold = num_items - warm
    return warm, cold - cold // 2, cold // 2


def split_dataset(table: InteractionTable, features=None, warm_frac: float = 0.8,
                  train_frac: float = 0.8, val_frac: float = 0.1, seed: int = 0) -> DatasetSplits:
    for name, v in (("warm_frac", warm_frac), ("train_frac", train_frac), ("val_frac", val_frac)):
        if not 0.0 < v < 1.0:
            raise ConfigError(f"{name} must lie in (0, 1), got {v}")
    if train_frac + val_frac >= 1.0:
        raise ConfigError("train_frac + val_frac must be < 1")
    if features is not None and np.asarray(features).shape[0] != table.num_items:
        raise DataError(f"features have {np.asarray(features).shape[0]} rows for {table.num_items} items")

    rng = np.random.default_rng(seed)
    n_warm, n_val, n_test = split_counts(table.num_items, warm_frac)
    if min(n_warm, n_val, n_test) == 0:
        raise DataError(f"empty item split: warm={n_warm} cold_val={n_val} cold_test={n_test}")
    perm = rng.permutation(table.num_items)
    warm_items = np.sort(perm[:n_warm])
    cold_val_items = np.sort(perm[n_warm:n_warm + n_val])
    cold_test_items = np.sort(perm[n_warm + n_val:])

    role = np.zeros(table.num_items, dtype=np.int8)  # 0 warm, 1 cold val, 2 cold test
    role[cold_val_items] = 1
    role[cold_test_items] = 2
    pair_role = role[table.items]

    # every pair consumes one draw so the warm split does not depend on cold membership order
    draws = rng.random(len(table))
    warm_mask = pair_role == 0
    train_mask = warm_mask & (draws < train_frac)
    val_mask = warm_mask & (draws >= train_frac) & (draws < train_frac + val_frac)
    test_mask = warm_mask & (draws >= train_frac + val_frac)

    splits = DatasetSplits(
        warm_items=warm_items,
        cold_val_items=cold_val_items,
        cold_test_items=cold_test_items,
        warm_train=table.subset(train_mask),
        warm_val=table.subset(val_mask),
        warm_test=table.subset(test_mask),
        cold_val=table.subset(pair_role == 1),
        cold_test=table.subset(pair_role == 2),
        seed=seed,
    )
    for name in ("warm_train", "warm_val", "warm_test", "cold_val", "cold_test"):
        if len(getattr(splits, name)) == 0:
            raise DataError(f"split '{name}' received no interactions")
    return splits


@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale generator settings.

    Preference logits are ``user_scale * z_u . z_i + popularity_weight * log p_i``
    with ``z_u ~ N(0, I)``. ``user_scale`` trades personal taste against
    popularity; ``None`` means ``1/sqrt(latent_dim)`` (unit-variance affinity).
    """

    num_users: int = 2000
    num_items: int = 1400
    latent_dim: int = 16
    feature_dim: int = 64
    zipf_exponent: float = 1.2
    popularity_weight: float = 1.0
    feature_noise: float = 0.3
    interactions_per_user: int = 20
    seed: int = 0
    user_scale: float | None = 0.5

    def validate(self) -> "SyntheticConfig":
        for name in ("num_users", "num_items", "latent_dim", "feature_dim", "interactions_per_user"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.zipf_exponent <= 0:
            raise ConfigError("zipf_exponent must be > 0")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be >= 0")
        if self.interactions_per_user >= self.num_items:
            raise ConfigError("interactions_per_user must be smaller than num_items")
        if self.user_scale is not None and self.user_scale < 0:
            raise ConfigError("user_scale must be >= 0")
        return self


@dataclass(frozen=True)
class SyntheticData:
    table: InteractionTable
    features: np.ndarray
    popularity: np.ndarray
    item_latents: np.ndarray = field(repr=False)
    user_latents: np.ndarray = field(repr=False)

    def __iter__(self):
        # (table, features, popularity) unpacking
        return iter((self.table, self.features, self.popularity))


def zipf_weights(num_items: int, exponent: float, rng) -> np.ndarray:
    """Normalized ``rank**-s`` weights assigned to items in random order."""
    ranks = np.empty(num_items, dtype=np.int64)
    ranks[rng.permutation(num_items)] = np.arange(1, num_items + 1)
    w = ranks.astype(np.float64) ** (-exponent)
    return w / w.sum()


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    """Sample a popularity-skewed implicit-feedback dataset with content features.

    Each user draws ``interactions_per_user`` distinct items without replacement
    (Gumbel top-k), item content is a noisy linear view of the item latent.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.latent_dim
    item_z = rng.standard_normal((cfg.num_items, d))
    user_z = rng.standard_normal((cfg.num_users, d))
    scale = 1.0 / math.sqrt(d) if cfg.user_scale is None else cfg.user_scale
    popularity = zipf_weights(cfg.num_items, cfg.zipf_exponent, rng)
    log_pop = cfg.popularity_weight * np.log(popularity)

    n = cfg.interactions_per_user
    chosen = np.empty((cfg.num_users, n), dtype=np.int64)
    for start in range(0, cfg.num_users, 512):
        stop = min(start + 512, cfg.num_users)
        logits = scale * (user_z[start:stop] @ item_z.T) + log_pop
        keys = logits + rng.gumbel(size=logits.shape)
        top = np.argpartition(-keys, n - 1, axis=1)[:, :n]
        chosen[start:stop] = np.sort(top, axis=1)

    users = np.repeat(np.arange(cfg.num_users), n)
    table = InteractionTable(cfg.num_users, cfg.num_items, users, chosen.ravel())

    projection = rng.standard_normal((d, cfg.feature_dim)) / math.sqrt(d)
    raw = item_z @ projection + cfg.feature_noise * rng.standard_normal((cfg.num_items, cfg.feature_dim))
    features = l2_normalize_rows(raw)
    return SyntheticData(table, features, popularity, item_z, user_z)
