"""End-to-end experiment: data -> split -> warm model -> cold encoder -> rank -> scale -> evaluate -> analyze."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import analysis, io
from .coldgen import EncoderConfig, KnnConfig, fit_encoder, generate_cold, knn_score_matrix, save_encoder
from .data import (InteractionTable, align_features, SyntheticConfig, build_features, generate_synthetic, load_interactions,
                   split_dataset)
from .errors import ColdPopError, ConfigError, DataError, StageError
from .metrics import METRIC_NAMES, ItemMdgTable, MetricReport, evaluate_log, item_mdg_table, mdg_aggregates, welch_t_test
from .mitigate import DEFAULT_SWEEP, scale_embeddings, warm_mean_magnitude
from .ranking import prediction_counts, rank_scores, rank_topk, write_counts_csv, write_ranking_csv
from .warm import BprConfig, save_model, train_warm

log = logging.getLogger(__name__)

SIGNIFICANCE = 0.01
BIG_CHANGE = 0.10


@dataclass
class SplitConfig:
    # 5/7 of 1400 synthetic items -> 1000 warm, 200 cold-val, 200 cold-test
    warm_frac: float = 5 / 7
    train_frac: float = 0.8
    val_frac: float = 0.1


@dataclass
class DataSource:
    """Either ``synthetic`` settings or an ``interactions`` file plus ``features`` mode files."""

    synthetic: SyntheticConfig | None = field(default_factory=SyntheticConfig)
    interactions: str | None = None
    features: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    data: DataSource = field(default_factory=DataSource)
    split: SplitConfig = field(default_factory=SplitConfig)
    warm: BprConfig = field(default_factory=BprConfig)
    cold: EncoderConfig = field(default_factory=EncoderConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    k: list = field(default_factory=lambda: [20, 50])
    alphas: list = field(default_factory=lambda: list(DEFAULT_SWEEP))
    select_k: int = 20
    ndcg_budget: float = 0.1
    num_runs: int = 5
    seed: int = 0
    mu_source: str = "serving"
    pooled_diagnostics: bool = False
    warm_as_cold: bool = False
    include_knn: bool = True
    fig4_alphas: list = field(default_factory=lambda: [0.0, 1.0, 3.0, 5.0])
    top_n: int = 50
    n_neighbors: int = 10
    threads: int = 1
    verbose: bool = False
    out: str = "results"

    def validate(self) -> "ExperimentConfig":
        try:
            return self._validate()
        except TypeError as exc:
            raise ConfigError(f"config value has the wrong type: {exc}") from None

    def _validate(self) -> "ExperimentConfig":
        if self.num_runs < 1:
            raise ConfigError("num_runs must be >= 1")
        if not self.k or any(int(k) < 1 for k in self.k):
            raise ConfigError("k must be a non-empty list of positive cutoffs")
        if self.select_k not in self.k:
            raise ConfigError(f"select_k={self.select_k} must be one of k={self.k}")
        if any(a <= 0 for a in self.alphas):
            raise ConfigError("sweep alphas must be positive (alpha=0 is always evaluated)")
        if self.ndcg_budget < 0:
            raise ConfigError("ndcg_budget must be >= 0")
        if self.mu_source not in ("serving", "generated"):
            raise ConfigError("mu_source must be 'serving' or 'generated'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.data.synthetic is None and not self.data.interactions:
            raise ConfigError("data needs either 'synthetic' settings or an 'interactions' path")
        if self.data.synthetic is None and not self.data.features:
            raise ConfigError("file-based data needs at least one feature file")
        if self.data.synthetic is not None:
            self.data.synthetic.validate()
        self.warm.validate()
        self.cold.validate()
        self.knn.validate()
        return self

    def to_json(self) -> dict:
        return io.to_jsonable(asdict(self))

    def sweep(self) -> list[float]:
        return [0.0] + sorted(float(a) for a in self.alphas)


_NESTED = {"data": DataSource, "split": SplitConfig, "warm": BprConfig, "cold": EncoderConfig, "knn": KnnConfig}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {k: _coerce(v, types[k], f"{where}.{k}") for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _coerce(value, annotation: str, where: str):
    # YAML 1.1 reads "1e-4" as a string
    if isinstance(value, str) and annotation.split(" |")[0] in ("float", "int"):
        try:
            return float(value) if annotation.startswith("float") else int(value)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    return value


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    kwargs = {}
    for key, value in raw.items():
        if key == "data":
            value = dict(value or {})
            syn = value.get("synthetic", {} if "interactions" not in value else None)
            if syn is not None:
                value["synthetic"] = _build(SyntheticConfig, syn, "data.synthetic")
            else:
                value["synthetic"] = None
            kwargs["data"] = _build(DataSource, value, "data")
        elif key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value or {}, key)
        else:
            kwargs[key] = value
    cfg = _build(ExperimentConfig, kwargs, "config")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(cfg, **changes).validate()


def select_alpha(val_reports, user_acc_budget: float = 0.1, k: int = 20) -> float:
    """Pick alpha on validation: best MDG-Min80%@k among alphas whose NDCG@k stays
    within ``user_acc_budget`` of the unscaled NDCG@k. Ties go to the smaller alpha."""
    reports = [r for r in val_reports if r.k == k]
    base = [r for r in reports if float(r.meta["alpha"]) == 0.0]
    if not base:
        raise ConfigError(f"validation reports must include alpha=0 at k={k}")
    floor = -math.inf if math.isinf(user_acc_budget) else (1.0 - user_acc_budget) * base[0]["ndcg"]
    # an NDCG exactly on the budget line counts as within it despite rounding in the product
    floor -= 1e-12 * abs(floor) if math.isfinite(floor) else 0.0
    candidates = sorted((float(r.meta["alpha"]), r) for r in reports if r["ndcg"] >= floor)
    if not candidates:
        log.warning("no alpha satisfies the NDCG budget; falling back to alpha=0")
        return 0.0
    best_alpha, best = candidates[0][0], candidates[0][1]["mdg_min80"]
    for alpha, r in candidates[1:]:
        if r["mdg_min80"] > best:
            best_alpha, best = alpha, r["mdg_min80"]
    return best_alpha


def compare_runs(base, treated, metrics=METRIC_NAMES) -> list[dict]:
    """Per-metric mean delta, Welch p-value and significance / >=10% flags (higher is better)."""
    base, treated = list(base), list(treated)
    if len(base) != len(treated):
        raise DataError(f"run counts differ: {len(base)} base vs {len(treated)} treated")
    if len(base) < 2:
        raise DataError("need at least two runs per side for a significance test")
    rows = []
    for name in metrics:
        if any(name not in r.values for r in base + treated):
            raise DataError(f"metric {name!r} missing from some reports")
        a = np.array([r[name] for r in base])
        b = np.array([r[name] for r in treated])
        test = welch_t_test(b, a)
        delta = float(b.mean() - a.mean())
        rel = delta / abs(a.mean()) if a.mean() != 0 else (math.inf if delta else 0.0)
        rows.append({
            "metric": name,
            "base_mean": float(a.mean()),
            "treated_mean": float(b.mean()),
            "delta": delta,
            "relative_change": rel,
            "p_value": test.pvalue,
            "significant_gain": bool(test.pvalue < SIGNIFICANCE and delta > 0),
            "significant_loss": bool(test.pvalue < SIGNIFICANCE and delta < 0),
            "change_10pct": bool(delta != 0 and abs(rel) >= BIG_CHANGE),
        })
    return rows


# ---------------------------------------------------------------------------
# pipeline


class _Output:
    """Writes files under the run directory, each with a JSON sidecar naming cfg and seed."""

    def __init__(self, root: Path, cfg: ExperimentConfig):
        self.root = root
        self.cfg_json = cfg.to_json()
        self.files: list[str] = []

    def meta(self, seed, **extra) -> dict:
        return {"config": self.cfg_json, "seed": seed, **extra}

    def emit(self, path: Path, seed, **extra):
        io.write_sidecar(path, self.meta(seed, file=path.name, **extra))
        self.files.append(str(path.relative_to(self.root)))

    def json(self, path: Path, payload: dict, seed, **extra):
        io.write_json(path, {**self.meta(seed, **extra), **payload})
        self.files.append(str(path.relative_to(self.root)))


@dataclass
class RunResult:
    run: int
    seed: int
    selected_alpha: float
    test_reports: list
    val_reports: list
    item_mdg: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (ColdPopError, ValueError, ArithmeticError, OSError) as exc:
                raise StageError(name, exc) from exc
            finally:
                log.debug("stage %s took %.2fs", name, time.perf_counter() - t0)
        return inner
    return wrap


@_stage("data")
def _load_data(cfg: ExperimentConfig, seed: int):
    if cfg.data.synthetic is not None:
        syn = generate_synthetic(dataclasses.replace(cfg.data.synthetic, seed=seed))
        return syn.table, syn.features
    table = load_interactions(cfg.data.interactions)
    modes = [io.read_matrix(p) for p in cfg.data.features]
    features = align_features(table, build_features(modes))
    return table, features


@_stage("split")
def _split(cfg, table, features, seed):
    return split_dataset(table, features, cfg.split.warm_frac, cfg.split.train_frac, cfg.split.val_frac, seed)


@_stage("train-warm")
def _train_warm(cfg, splits, seed):
    return train_warm(splits.warm_train, dataclasses.replace(cfg.warm, seed=seed), splits.warm_items,
                      validation=splits.warm_val)


@_stage("train-cold")
def _train_cold(cfg, features, splits, model, seed):
    enc_cfg = dataclasses.replace(cfg.cold, seed=seed)
    encoder = fit_encoder(features[splits.warm_items], model.item_embeddings, cfg=enc_cfg)
    cold_items = np.concatenate([splits.cold_val_items, splits.cold_test_items])
    full = np.zeros((splits.num_items, model.latent_dim))
    full[cold_items] = generate_cold(encoder, features[cold_items])
    return encoder, full


def _concat(a: InteractionTable, b: InteractionTable) -> InteractionTable:
    return InteractionTable(a.num_users, a.num_items, np.concatenate([a.users, b.users]),
                            np.concatenate([a.items, b.items]))


def _eval_users(splits, holdout):
    users = np.unique(holdout.users)
    active = splits.warm_train.user_activity > 0
    return users[active[users]]


@_stage("rank")
def _rank_pool(cfg, model, full, mu_w, pool, users, alphas):
    kmax = max(cfg.k)
    logs = {}
    for alpha in alphas:
        X = full.copy()
        X[pool] = scale_embeddings(full[pool], mu_w, alpha)
        logs[alpha] = rank_topk(model.user_embeddings, X, pool, users, kmax, threads=cfg.threads)
    return logs


@_stage("evaluate")
def _evaluate(cfg, logs, holdout, meta):
    reports = []
    for alpha, lg in logs.items():
        for k in cfg.k:
            reports.append(evaluate_log(lg, holdout, k, meta={**meta, "alpha": alpha}))
    return reports


def _knn_log(cfg, splits, features, pool, users):
    S = knn_score_matrix(users, splits.warm_train, features, pool, cfg.knn)
    return rank_scores(S, pool, users, max(cfg.k), threads=cfg.threads)


@_stage("analyze")
def _analyze(cfg, out: _Output, run_dir, seed, splits, features, model, full, logs, selected):
    k = cfg.select_k
    pool = splits.cold_test_items
    holdout = splits.cold_test
    base_counts = prediction_counts(logs[0.0].truncate(k))
    if cfg.pooled_diagnostics and "pooled" in logs:
        pooled_counts = prediction_counts(logs["pooled"].truncate(k))
        t = analysis.fig1_table(pooled_counts, _concat(splits.cold_val, splits.cold_test))
        t.write_csv(run_dir / "fig1_pooled.csv")
        out.emit(run_dir / "fig1_pooled.csv", seed, k=k, pool="cold_val+cold_test", alpha=0.0)

    t = analysis.fig1_table(base_counts, holdout)
    t.write_csv(run_dir / "fig1.csv")
    out.emit(run_dir / "fig1.csv", seed, k=k, pool="cold_test", alpha=0.0)

    warm_pop = splits.warm_train.popularity[splits.warm_items]
    subset = analysis.top_predicted(base_counts, 0.1)
    t2 = analysis.neighbor_popularity(subset, features, splits.warm_items, warm_pop,
                                      min(cfg.n_neighbors, len(splits.warm_items)))
    t2 = t2.with_column("pred_count", [base_counts[i] for i in subset.tolist()])
    t2.write_csv(run_dir / "fig2.csv")
    out.emit(run_dir / "fig2.csv", seed, k=k, pool="cold_test", n_neighbors=cfg.n_neighbors)

    t3 = analysis.fig3_table(base_counts, full[pool])
    t3.write_csv(run_dir / "fig3.csv")
    out.emit(run_dir / "fig3.csv", seed, k=k, pool="cold_test", alpha=0.0)

    fig4 = sorted(set(float(a) for a in cfg.fig4_alphas if float(a) in logs) | {selected})
    for alpha in fig4:
        c = prediction_counts(logs[alpha].truncate(k))
        path = run_dir / f"fig4_alpha{alpha:g}.csv"
        analysis.percentile_curve(c, label=f"alpha={alpha:g}").write_csv(path)
        out.emit(path, seed, k=k, pool="cold_test", alpha=alpha)

    conc = {}
    top_n = min(cfg.top_n, len(pool))
    for alpha, lg in logs.items():
        if alpha == "pooled":
            continue
        conc[alpha] = analysis.concentration(prediction_counts(lg.truncate(k)), top_n, k, len(lg.users))
    out.json(run_dir / "concentration.json",
             {"k": k, "pool": "cold_test", "selected_alpha": selected,
              "by_alpha": {f"{a:g}": s.to_json() for a, s in conc.items()}}, seed)

    # warm reference: warm model on warm items, training items excluded
    rows = model.item_rows(splits.num_items)
    seen = splits.warm_train.items_by_user()
    users = np.flatnonzero(splits.warm_train.user_activity > 0)
    wlog = rank_topk(model.user_embeddings, model.item_embeddings, np.arange(len(model.items)), users, k,
                     exclusions=[rows[seen[u]] for u in users], threads=cfg.threads)
    wcounts = prediction_counts(wlog)
    order = np.argsort(model.items[wcounts.pool])
    wcounts = type(wcounts)(model.items[wcounts.pool][order], wcounts.counts[order], wcounts.num_users)
    wh = _concat(splits.warm_val, splits.warm_test)
    analysis.fig1_table(wcounts, wh).write_csv(run_dir / "fig1_warm.csv")
    out.emit(run_dir / "fig1_warm.csv", seed, k=k, pool="warm", model="mf_bpr")
    return base_counts


def _warm_as_cold(cfg, out, run_dir, seed, splits, features, encoder, model):
    """Cold encoder scoring warm items from content only, against the warm holdout."""
    k = cfg.select_k
    X = np.zeros((splits.num_items, model.latent_dim))
    X[splits.warm_items] = generate_cold(encoder, features[splits.warm_items])
    users = np.flatnonzero(splits.warm_train.user_activity > 0)
    seen = splits.warm_train.items_by_user()
    lg = rank_topk(model.user_embeddings, X, splits.warm_items, users, k,
                   exclusions=[seen[u] for u in users], threads=cfg.threads)
    wh = _concat(splits.warm_val, splits.warm_test)
    analysis.fig1_table(prediction_counts(lg), wh).write_csv(run_dir / "fig1_warm_as_cold.csv")
    out.emit(run_dir / "fig1_warm_as_cold.csv", seed, k=k, pool="warm", model=f"{cfg.cold.mode}_as_cold")


def _run_once(cfg: ExperimentConfig, out: _Output, run: int, data_cache: dict) -> RunResult:
    seed = cfg.seed + run
    run_dir = out.root / f"run_{run}"
    run_dir.mkdir()
    if cfg.data.synthetic is not None or "data" not in data_cache:
        data_cache["data"] = _load_data(cfg, seed)
    table, features = data_cache["data"]
    splits = _split(cfg, table, features, seed)
    out.json(run_dir / "splits.json", splits.to_json(), seed)

    model = _train_warm(cfg, splits, seed)
    save_model(run_dir / "warm", model, dataclasses.replace(cfg.warm, seed=seed),
               extra={"experiment": out.cfg_json})
    for name in ("users.emb", "items.emb"):
        out.emit(run_dir / "warm" / name, seed, stage="train-warm")
    out.files.append(f"run_{run}/warm/model.json")

    encoder, full = _train_cold(cfg, features, splits, model, seed)
    save_encoder(run_dir / "cold", encoder, extra={"experiment": out.cfg_json})
    for i in range(len(encoder.weights)):
        out.emit(run_dir / "cold" / f"encoder_w{i}.emb", seed, stage="train-cold")
    out.files.append(f"run_{run}/cold/encoder.json")
    cold_items = np.concatenate([splits.cold_val_items, splits.cold_test_items])
    io.write_emb(run_dir / "cold" / "cold_embeddings.emb", full[cold_items])
    out.emit(run_dir / "cold" / "cold_embeddings.emb", seed, items=cold_items)

    if cfg.mu_source == "serving":
        mu_w = warm_mean_magnitude(model.item_embeddings)
    else:
        mu_w = warm_mean_magnitude(generate_cold(encoder, features[splits.warm_items]))

    model_tag = cfg.cold.mode
    sweep = cfg.sweep()
    logs, reports = {}, {}
    for pool_name in ("cold_val", "cold_test"):
        pool, holdout = splits.pool(pool_name), splits.holdout(pool_name)
        users = _eval_users(splits, holdout)
        meta = {"seed": seed, "run": run, "model": model_tag, "pool": pool_name, "mu_w": mu_w}
        logs[pool_name] = _rank_pool(cfg, model, full, mu_w, pool, users, sweep)
        reports[pool_name] = _evaluate(cfg, logs[pool_name], holdout, meta)
        if cfg.include_knn:
            klog = _knn_log(cfg, splits, features, pool, users)
            reports[pool_name] += [evaluate_log(klog, holdout, k, meta={**meta, "model": "knn", "alpha": 0.0})
                                   for k in cfg.k]

    if cfg.pooled_diagnostics:
        pooled = np.sort(cold_items)
        ho_users = np.concatenate([splits.cold_val.users, splits.cold_test.users])
        users = np.unique(ho_users)
        users = users[splits.warm_train.user_activity[users] > 0]
        logs["cold_test"]["pooled"] = rank_topk(model.user_embeddings, full, pooled, users, max(cfg.k),
                                                threads=cfg.threads)

    val_model = [r for r in reports["cold_val"] if r.meta["model"] == model_tag]
    selected = select_alpha(val_model, cfg.ndcg_budget, cfg.select_k)
    out.json(run_dir / "selection.json", {
        "selected_alpha": selected, "mu_w": mu_w, "budget": cfg.ndcg_budget, "k": cfg.select_k,
        "validation": [{"alpha": r.meta["alpha"], "k": r.k, **r.values} for r in val_model]}, seed)

    scaled = scale_embeddings(full[cold_items], mu_w, selected)
    io.write_emb(run_dir / "cold" / "cold_scaled.emb", scaled)
    out.emit(run_dir / "cold" / "cold_scaled.emb", seed, alpha=selected, mu_w=mu_w, items=cold_items)

    for alpha in sorted({0.0, selected}):
        path = run_dir / f"ranking_test_alpha{alpha:g}.csv"
        write_ranking_csv(path, logs["cold_test"][alpha])
        out.emit(path, seed, alpha=alpha, k=max(cfg.k))
    counts = prediction_counts(logs["cold_test"][selected].truncate(cfg.select_k))
    write_counts_csv(run_dir / "counts_test_selected.csv", counts)
    out.emit(run_dir / "counts_test_selected.csv", seed, alpha=selected, k=cfg.select_k)

    _analyze(cfg, out, run_dir, seed, splits, features, model, full, logs["cold_test"], selected)
    if cfg.warm_as_cold:
        _warm_as_cold(cfg, out, run_dir, seed, splits, features, encoder, model)

    item_mdg = {}
    if cfg.verbose:
        for alpha in sorted({0.0, selected}):
            t = item_mdg_table(logs["cold_test"][alpha], splits.cold_test, cfg.select_k)
            path = run_dir / f"item_mdg_alpha{alpha:g}.csv"
            t.write_csv(path)
            out.emit(path, seed, alpha=alpha, k=cfg.select_k)
            item_mdg[alpha] = t

    return RunResult(run, seed, selected, reports["cold_test"], reports["cold_val"], item_mdg)


_CSV_HEAD = ["model", "alpha", "alpha_value", "k", "run", "seed"] + list(METRIC_NAMES) + \
            ["num_users", "num_items"] + [f"{m}_std" for m in METRIC_NAMES]


def _fmt(v) -> str:
    return repr(float(v))


def _metric_rows(results: list[RunResult], which: str, model_tag: str, cfg: ExperimentConfig):
    groups: dict[tuple, list] = {}
    for res in results:
        reports = res.test_reports if which == "test" else res.val_reports
        for r in reports:
            label = f"{float(r.meta['alpha']):g}"
            groups.setdefault((r.meta["model"], label, r.k), []).append((res, r))
            if which == "test" and r.meta["model"] == model_tag and float(r.meta["alpha"]) == res.selected_alpha:
                groups.setdefault((f"{model_tag}+MS", "selected", r.k), []).append((res, r))
    rows = []
    for (model, label, k) in sorted(groups, key=lambda g: (g[0], g[1] != "selected", _alpha_key(g[1]), g[2])):
        entries = groups[(model, label, k)]
        for res, r in entries:
            rows.append([model, label, _fmt(r.meta["alpha"]), k, res.run, res.seed] +
                        [_fmt(r[m]) for m in METRIC_NAMES] + [r.num_users, r.num_items] + [""] * len(METRIC_NAMES))
        vals = np.array([[r[m] for m in METRIC_NAMES] for _, r in entries])
        std = vals.std(axis=0, ddof=1) if len(entries) > 1 else np.zeros(len(METRIC_NAMES))
        rows.append([model, label, "", k, "aggregate", ""] + [_fmt(v) for v in vals.mean(axis=0)] +
                    ["", ""] + [_fmt(v) for v in std])
    return rows


def _alpha_key(label: str) -> float:
    return -1.0 if label == "selected" else float(label)


def _write_metrics(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_HEAD)
        w.writerows(rows)


def _write_comparison(path: Path, results: list[RunResult], model_tag: str, cfg: ExperimentConfig):
    rows = []
    for k in cfg.k:
        base = [next(r for r in res.test_reports if r.meta["model"] == model_tag and r.k == k
                     and float(r.meta["alpha"]) == 0.0) for res in results]
        treated = [next(r for r in res.test_reports if r.meta["model"] == model_tag and r.k == k
                        and float(r.meta["alpha"]) == res.selected_alpha) for res in results]
        if len(results) < 2:
            continue
        for row in compare_runs(base, treated):
            rows.append({"k": k, **row})
    with open(path, "w", newline="") as fh:
        fields = ["k", "metric", "base_mean", "treated_mean", "delta", "relative_change", "p_value",
                  "significant_gain", "significant_loss", "change_10pct"]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def _pooled_mdg(results: list[RunResult]) -> dict:
    """Min80/Max5/All from per-item MDG averaged over runs (the alternative aggregation order)."""
    out = {}
    for alpha_key in ("base", "selected"):
        sums: dict[int, list] = {}
        for res in results:
            alpha = 0.0 if alpha_key == "base" else res.selected_alpha
            t = res.item_mdg.get(alpha)
            if t is None:
                continue
            for i, v in zip(t.items.tolist(), t.mdg.tolist()):
                sums.setdefault(i, []).append(v)
        if not sums:
            continue
        items = np.array(sorted(sums))
        table = ItemMdgTable(items, np.array([len(sums[i]) for i in items]),
                             np.array([np.mean(sums[i]) for i in items]))
        out[alpha_key] = dict(zip(("mdg_min80", "mdg_max5", "mdg_all"), mdg_aggregates(table)))
    return out


def read_metrics_csv(path, model: str, alpha: str, k: int) -> list[MetricReport]:
    """Per-run reports for one (model, alpha label, k) group of a ``metrics.csv``."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["model"] != model or row["alpha"] != alpha or int(row["k"]) != k or row["run"] == "aggregate":
                continue
            values = {m: float(row[m]) for m in METRIC_NAMES}
            out.append(MetricReport(k, values, int(row["num_users"]), int(row["num_items"]),
                                    {"model": model, "alpha": float(row["alpha_value"]), "run": int(row["run"]),
                                     "seed": int(row["seed"])}))
    if not out:
        raise DataError(f"{path}: no rows for model={model!r} alpha={alpha!r} k={k}")
    return out


def run_pipeline(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run every stage for ``cfg.num_runs`` seeds and write reports into an empty output directory."""
    cfg.validate()
    root = Path(out_dir or cfg.out)
    if root.exists() and any(root.iterdir()):
        raise ConfigError(f"output directory {root} is not empty")
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{root} is locked by another pipeline") from None
    os.close(fd)
    out = _Output(root, cfg)
    try:
        out.json(root / "config.json", {}, cfg.seed)
        data_cache: dict = {}
        results = [_run_once(cfg, out, run, data_cache) for run in range(cfg.num_runs)]
        model_tag = cfg.cold.mode
        _write_metrics(root / "metrics.csv", _metric_rows(results, "test", model_tag, cfg))
        out.emit(root / "metrics.csv", cfg.seed, pool="cold_test", run_seeds=[r.seed for r in results])
        _write_metrics(root / "metrics_val.csv", _metric_rows(results, "val", model_tag, cfg))
        out.emit(root / "metrics_val.csv", cfg.seed, pool="cold_val", run_seeds=[r.seed for r in results])
        _write_comparison(root / "comparison.csv", results, model_tag, cfg)
        out.emit(root / "comparison.csv", cfg.seed, base=f"{model_tag} alpha=0", treated=f"{model_tag}+MS")
        summary = {"selected_alpha": {str(r.run): r.selected_alpha for r in results},
                   "run_seeds": [r.seed for r in results]}
        if cfg.verbose:
            summary["pooled_item_mdg"] = _pooled_mdg(results)
        summary["files"] = sorted(out.files)
        out.json(root / "summary.json", summary, cfg.seed)
    except BaseException as exc:
        (root / "STALE").write_text(f"pipeline failed: {exc}\n")
        raise
    finally:
        lock.unlink(missing_ok=True)
    return root


__all__ = ["ExperimentConfig", "DataSource", "SplitConfig", "config_from_dict", "load_config", "run_pipeline",
           "select_alpha", "compare_runs", "with_overrides", "read_metrics_csv"]
