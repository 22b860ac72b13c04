"""
How a cold-start encoder inherits popularity bias
=================================================

A BPR model trained on skewed interactions gives popular items longer
vectors. A ridge encoder that regresses content features onto those vectors
hands the same bias to cold items, and the long cold vectors then dominate
top-k lists. This walk-through builds each piece by hand on synthetic data.
"""

import numpy as np

from coldpop import analysis
from coldpop.coldgen import fit_encoder, generate_cold
from coldpop.data import SyntheticConfig, generate_synthetic, split_dataset
from coldpop.metrics import evaluate_log
from coldpop.mitigate import scale_embeddings, warm_mean_magnitude
from coldpop.ranking import prediction_counts, rank_topk
from coldpop.warm import BprConfig, train_warm

data = generate_synthetic(SyntheticConfig(seed=0))
splits = split_dataset(data.table, data.features, warm_frac=5 / 7, seed=0)
print(f"{data.table.num_users} users, {len(splits.warm_items)} warm items, "
      f"{len(splits.cold_test_items)} cold test items")

###############################################################################
# Warm model: vector length tracks training popularity

model = train_warm(splits.warm_train, BprConfig(seed=0), splits.warm_items, validation=splits.warm_val)
pop = splits.warm_train.popularity[model.items]
print("Spearman(warm magnitude, popularity):", round(analysis.spearman(model.item_magnitudes(), pop), 3))

###############################################################################
# Ridge encoder from content features to warm embeddings

encoder = fit_encoder(data.features[splits.warm_items], model.item_embeddings, lam=0.1)
full = np.zeros((splits.num_items, model.latent_dim))
full[splits.cold_test_items] = generate_cold(encoder, data.features[splits.cold_test_items])

pool, holdout = splits.pool("cold_test"), splits.holdout("cold_test")
users = np.unique(holdout.users)
users = users[splits.warm_train.user_activity[users] > 0]

###############################################################################
# Rank the cold pool before and after scaling

mu_w = warm_mean_magnitude(model.item_embeddings)
for alpha in (0.0, 1.0, 3.0):
    vectors = full.copy()
    vectors[pool] = scale_embeddings(full[pool], mu_w, alpha)
    log = rank_topk(model.user_embeddings, vectors, pool, users, 20)
    counts = prediction_counts(log)
    report = evaluate_log(log, holdout, 20)
    rho = analysis.spearman(np.linalg.norm(vectors[pool], axis=1), counts.counts)
    conc = analysis.concentration(counts, 50, 20, len(users))
    print(f"alpha={alpha:g}: ndcg={report['ndcg']:.4f} min80={report['mdg_min80']:.4f} "
          f"gini_div={report['gini_div']:.3f} top50_share={conc.top_n_share:.3f} "
          f"zero_pred={conc.zero_pred_items} rho(mag, count)={rho:.3f}")
