"""Command-line entry point: ``coldpop <subcommand> [options]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, io
from .coldgen import fit_encoder, generate_cold, save_encoder
from .data import (align_features, build_features, generate_synthetic, load_interactions, load_splits,
                   save_interactions, save_splits, split_dataset)
from .errors import ColdPopError, ConfigError, DataError
from .metrics import evaluate_log
from .mitigate import scale_embeddings, warm_mean_magnitude
from .pipeline import (ExperimentConfig, compare_runs, config_from_dict, load_config, read_metrics_csv,
                       run_pipeline)
from .ranking import prediction_counts, rank_topk, read_ranking_csv, write_counts_csv, write_ranking_csv
from .warm import load_model, save_model, train_warm

log = logging.getLogger("coldpop")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="YAML or JSON experiment config")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed (the only source of randomness)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="ranking worker threads")
    g.add_argument("--k", type=_ints, default=argparse.SUPPRESS, help="ranking cutoffs, e.g. 20,50")
    g.add_argument("--alpha", type=_floats, default=argparse.SUPPRESS,
                   help="scaling strength(s); a list overrides the pipeline sweep")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags()
    parser = argparse.ArgumentParser(prog="coldpop", parents=[flags],
                                     description="Popularity bias diagnostics and magnitude scaling for cold-start items.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        return sub.add_parser(name, parents=[flags], help=help_, description=help_)

    add("generate", "write a synthetic interaction file and item features")

    p = add("split", "partition items into warm / cold-val / cold-test and split warm interactions")
    p.add_argument("--interactions", required=True, help="user<TAB>item TSV")
    p.add_argument("--features", nargs="+", required=True, help="one EMB1 or CSV matrix per content mode")

    p = add("train-warm", "train the MF-BPR warm model")
    p.add_argument("--splits", required=True, help="directory written by 'split'")

    p = add("train-cold", "fit the content encoder and generate cold embeddings")
    p.add_argument("--splits", required=True)
    p.add_argument("--features", required=True, help="features.emb written by 'split'")
    p.add_argument("--warm", required=True, help="directory written by 'train-warm'")

    p = add("scale", "apply magnitude scaling to cold embeddings")
    p.add_argument("--embeddings", required=True, help="cold EMB1 file with an 'items' sidecar")
    p.add_argument("--warm", required=True, help="warm model directory (source of mu_w)")

    p = add("rank", "write top-k lists for a pool")
    p.add_argument("--warm", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--pool", default="cold_test", choices=["warm", "cold_val", "cold_test"])
    p.add_argument("--embeddings", help="cold EMB1 file (required for cold pools)")

    p = add("evaluate", "compute all metrics for a ranking CSV")
    p.add_argument("--ranking", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--pool", default="cold_test", choices=["cold_val", "cold_test"])

    p = add("analyze", "write exposure diagnostic tables for a ranking CSV")
    p.add_argument("--ranking", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--pool", default="cold_test", choices=["cold_val", "cold_test"])
    p.add_argument("--embeddings", help="cold EMB1 file, for the magnitude table")
    p.add_argument("--features", help="features.emb, for the neighbor-popularity table")
    p.add_argument("--top-n", type=int, default=50)

    add("pipeline", "run the full multi-seed experiment")

    p = add("compare", "Welch t-test between two model groups of a metrics.csv")
    p.add_argument("--metrics", required=True, help="metrics.csv written by 'pipeline'")
    p.add_argument("--base", default="ridge:0", help="model:alpha label of the baseline rows")
    p.add_argument("--treated", default="ridge+MS:selected", help="model:alpha label of the treated rows")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    changes = {}
    for name in ("seed", "threads", "k", "out", "verbose"):
        if hasattr(args, name):
            changes[name] = getattr(args, name)
    if hasattr(args, "k") and cfg.select_k not in args.k:
        changes["select_k"] = args.k[0]
    if args.command == "pipeline" and hasattr(args, "alpha"):
        changes["alphas"] = [a for a in args.alpha if a > 0]
    try:
        return dataclasses.replace(cfg, **changes).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out(args, default: str) -> Path:
    return Path(getattr(args, "out", default))


def _sidecar(path: Path, cfg: ExperimentConfig, **extra) -> None:
    io.write_sidecar(path, {"config": cfg.to_json(), "seed": cfg.seed, "file": path.name, **extra})


def _cold_items(path) -> np.ndarray:
    side = io.sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        return np.asarray(meta["items"], dtype=np.int64)
    except (OSError, ValueError, KeyError):
        raise DataError(f"{side}: missing sidecar with an 'items' list") from None


def _full_matrix(num_items: int, items: np.ndarray, rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] != len(items):
        raise DataError(f"{rows.shape[0]} embedding rows for {len(items)} listed items")
    full = np.zeros((num_items, rows.shape[1]))
    full[items] = rows
    return full


def cmd_generate(args, cfg):
    syn = cfg.data.synthetic
    if syn is None:
        raise ConfigError("'generate' needs data.synthetic settings")
    data = generate_synthetic(dataclasses.replace(syn, seed=cfg.seed))
    out = _out(args, "data")
    out.mkdir(parents=True, exist_ok=True)
    save_interactions(out / "interactions.tsv", data.table)
    _sidecar(out / "interactions.tsv", cfg, num_users=data.table.num_users, num_items=data.table.num_items)
    io.write_emb(out / "features.emb", data.features)
    _sidecar(out / "features.emb", cfg)
    with open(out / "popularity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "weight"])
        w.writerows([i, repr(float(p))] for i, p in enumerate(data.popularity))
    _sidecar(out / "popularity.csv", cfg)
    log.info("wrote %d interactions for %d users x %d items to %s", len(data.table), data.table.num_users,
             data.table.num_items, out)


def cmd_split(args, cfg):
    table = load_interactions(args.interactions)
    features = align_features(table, build_features([io.read_matrix(p) for p in args.features]))
    splits = split_dataset(table, features, cfg.split.warm_frac, cfg.split.train_frac, cfg.split.val_frac, cfg.seed)
    out = _out(args, "splits")
    save_splits(out, splits)
    io.write_emb(out / "features.emb", features)
    for f in sorted(out.iterdir()):
        if not f.name.endswith(".json") or f.name == "splits.json":
            _sidecar(f, cfg)
    log.info("warm=%d cold_val=%d cold_test=%d", len(splits.warm_items), len(splits.cold_val_items),
             len(splits.cold_test_items))


def cmd_train_warm(args, cfg):
    splits = load_splits(args.splits)
    bpr = dataclasses.replace(cfg.warm, seed=cfg.seed)
    model = train_warm(splits.warm_train, bpr, splits.warm_items, validation=splits.warm_val)
    out = _out(args, "warm")
    save_model(out, model, bpr, extra={"experiment": cfg.to_json()})
    for name in ("users.emb", "items.emb"):
        _sidecar(out / name, cfg, stage="train-warm")


def cmd_train_cold(args, cfg):
    splits = load_splits(args.splits)
    features = io.read_matrix(args.features).astype(np.float64)
    model, _ = load_model(args.warm)
    encoder = fit_encoder(features[model.items], model.item_embeddings, cfg=dataclasses.replace(cfg.cold, seed=cfg.seed))
    out = _out(args, "cold")
    save_encoder(out, encoder, extra={"experiment": cfg.to_json()})
    for i in range(len(encoder.weights)):
        _sidecar(out / f"encoder_w{i}.emb", cfg, stage="train-cold")
    items = np.sort(np.concatenate([splits.cold_val_items, splits.cold_test_items]))
    io.write_emb(out / "cold_embeddings.emb", generate_cold(encoder, features[items]))
    _sidecar(out / "cold_embeddings.emb", cfg, items=items)


def cmd_scale(args, cfg):
    alphas = getattr(args, "alpha", None)
    if not alphas or len(alphas) != 1:
        raise ConfigError("'scale' needs exactly one --alpha value")
    alpha = alphas[0]
    model, _ = load_model(args.warm)
    mu_w = warm_mean_magnitude(model.item_embeddings)
    items = _cold_items(args.embeddings)
    scaled = scale_embeddings(io.read_emb(args.embeddings).astype(np.float64), mu_w, alpha)
    out = _out(args, f"cold_scaled_alpha{alpha:g}.emb")
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_emb(out, scaled)
    _sidecar(out, cfg, alpha=alpha, mu_w=mu_w, items=items)


def _eval_users(splits, holdout):
    users = np.unique(holdout.users)
    return users[splits.warm_train.user_activity[users] > 0]


def cmd_rank(args, cfg):
    splits = load_splits(args.splits)
    model, _ = load_model(args.warm)
    k = max(cfg.k)
    if args.pool == "warm":
        rows = model.item_rows(splits.num_items)
        seen = splits.warm_train.items_by_user()
        users = np.flatnonzero(splits.warm_train.user_activity > 0)
        lg = rank_topk(model.user_embeddings, model.item_embeddings, np.arange(len(model.items)), users, k,
                       exclusions=[rows[seen[u]] for u in users], threads=cfg.threads)
        lg = dataclasses.replace(lg, pool=model.items, items=np.where(lg.items >= 0, model.items[lg.items], -1))
    else:
        if not args.embeddings:
            raise ConfigError(f"--embeddings is required for pool {args.pool}")
        full = _full_matrix(splits.num_items, _cold_items(args.embeddings), io.read_emb(args.embeddings))
        pool = splits.pool(args.pool)
        lg = rank_topk(model.user_embeddings, full, pool, _eval_users(splits, splits.holdout(args.pool)), k,
                       threads=cfg.threads)
    out = _out(args, f"ranking_{args.pool}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ranking_csv(out, lg)
    _sidecar(out, cfg, pool=args.pool, k=k)


def cmd_evaluate(args, cfg):
    splits = load_splits(args.splits)
    lg = read_ranking_csv(args.ranking, pool=splits.pool(args.pool))
    holdout = splits.holdout(args.pool)
    reports = [evaluate_log(lg, holdout, k, meta={"pool": args.pool}).to_json() for k in cfg.k]
    out = _out(args, "metrics.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(out, {"config": cfg.to_json(), "seed": cfg.seed, "ranking": str(args.ranking), "reports": reports})
    for r in reports:
        print(f"k={r['k']} " + " ".join(f"{m}={v:.5f}" for m, v in r["values"].items()))


def cmd_analyze(args, cfg):
    splits = load_splits(args.splits)
    pool = splits.pool(args.pool)
    holdout = splits.holdout(args.pool)
    k = cfg.select_k
    counts = prediction_counts(read_ranking_csv(args.ranking, pool=pool).truncate(k))
    out = _out(args, "analysis")
    out.mkdir(parents=True, exist_ok=True)
    tables = {"fig1.csv": analysis.fig1_table(counts, holdout),
              "fig4.csv": analysis.percentile_curve(counts)}
    if args.embeddings:
        full = _full_matrix(splits.num_items, _cold_items(args.embeddings), io.read_emb(args.embeddings))
        tables["fig3.csv"] = analysis.fig3_table(counts, full[pool])
    if args.features:
        features = io.read_matrix(args.features)
        subset = analysis.top_predicted(counts, 0.1)
        tables["fig2.csv"] = analysis.neighbor_popularity(
            subset, features, splits.warm_items, splits.warm_train.popularity[splits.warm_items],
            min(cfg.n_neighbors, len(splits.warm_items)))
    for name, table in tables.items():
        table.write_csv(out / name)
        _sidecar(out / name, cfg, pool=args.pool, k=k)
    write_counts_csv(out / "counts.csv", counts)
    _sidecar(out / "counts.csv", cfg, pool=args.pool, k=k)
    stats = analysis.concentration(counts, min(args.top_n, len(pool)), k, counts.num_users)
    io.write_json(out / "concentration.json", {"config": cfg.to_json(), "seed": cfg.seed, "k": k, **stats.to_json()})


def cmd_pipeline(args, cfg):
    root = run_pipeline(cfg, _out(args, cfg.out))
    print(f"results written to {root}")


def cmd_compare(args, cfg):
    def group(label):
        model, _, alpha = label.rpartition(":")
        if not model:
            raise ConfigError(f"expected model:alpha, got {label!r}")
        return model, alpha

    rows = []
    for k in cfg.k:
        base = read_metrics_csv(args.metrics, *group(args.base), k)
        treated = read_metrics_csv(args.metrics, *group(args.treated), k)
        rows += [{"k": k, **r} for r in compare_runs(base, treated)]
    fields = list(rows[0])
    dest = getattr(args, "out", None)
    fh = open(dest, "w", newline="") if dest else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if dest:
            fh.close()
    if dest:
        _sidecar(Path(dest), cfg, metrics=str(args.metrics), base=args.base, treated=args.treated)


COMMANDS = {
    "generate": cmd_generate, "split": cmd_split, "train-warm": cmd_train_warm, "train-cold": cmd_train_cold,
    "scale": cmd_scale, "rank": cmd_rank, "evaluate": cmd_evaluate, "analyze": cmd_analyze,
    "pipeline": cmd_pipeline, "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except ColdPopError as exc:
        print(f"coldpop {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"coldpop {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
