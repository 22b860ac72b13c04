"""
A full experiment from a config dictionary
==========================================

``run_pipeline`` repeats generation, training, alpha selection and evaluation
once per seed, then writes metrics.csv and a significance table. The same run
is available from the shell as ``coldpop pipeline --config cfg.yaml``.
"""

import sys
import tempfile
from pathlib import Path

from coldpop.pipeline import compare_runs, config_from_dict, read_metrics_csv, run_pipeline

cfg = config_from_dict({
    "data": {"synthetic": {"num_users": 1000, "num_items": 700}},
    "num_runs": 3,
    "alphas": [1.0, 3.0, 5.0],
})

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "results"
run_pipeline(cfg, out)
print("wrote", out)

###############################################################################
# Selected-alpha rows against the unscaled encoder, one row per metric

base = read_metrics_csv(out / "metrics.csv", "ridge", "0", 20)
treated = read_metrics_csv(out / "metrics.csv", "ridge+MS", "selected", 20)
print("selected alpha per run:", [r.meta["alpha"] for r in treated])
for row in compare_runs(base, treated):
    flag = "gain" if row["significant_gain"] else "loss" if row["significant_loss"] else ""
    print(f"{row['metric']:<10} {row['base_mean']:.4f} -> {row['treated_mean']:.4f} "
          f"({row['relative_change']:+.1%}) p={row['p_value']:.3g} {flag}")
