"""
Magnitude scaling on toy vectors
================================

Cold embeddings with a large norm win many dot-product rankings. Magnitude
scaling pulls every norm toward the warm mean ``mu_w`` while keeping each
vector's direction.
"""

import numpy as np

from coldpop import scale_embeddings, scaling_factor, warm_mean_magnitude
from coldpop.mitigate import normalize_to, row_norms

rng = np.random.default_rng(0)

# warm item vectors fix the target magnitude
warm = rng.normal(size=(500, 16))
mu_w = warm_mean_magnitude(warm)
print(f"mu_w = {mu_w:.3f}")

# cold vectors with widely spread norms
cold = rng.normal(size=(8, 16)) * np.geomspace(0.1, 10, 8)[:, None]
m = row_norms(cold)

# the new norm is mu_w + (m - mu_w) / (1 + alpha): the spread shrinks by 1 + alpha
for alpha in (0.0, 1.0, 5.0):
    s = row_norms(scale_embeddings(cold, mu_w, alpha))
    print(f"alpha={alpha:<4g} norms={np.round(s, 2)}  std ratio={s.std() / m.std():.4f}")

# the per-row factor is above 1 for short vectors and below 1 for long ones
print("gamma at alpha=1:", np.round(scaling_factor(m, mu_w, 1.0), 3))

# directions never change, so cosine similarity to the original is 1
y = scale_embeddings(cold, mu_w, 3.0)
cos = np.sum(cold * y, axis=1) / (m * row_norms(y))
print("max |cos - 1|:", float(np.max(np.abs(cos - 1))))

# as alpha grows the result approaches plain renormalization to mu_w
gap = np.max(np.abs(scale_embeddings(cold, mu_w, 1e9) - normalize_to(cold, mu_w)))
print(f"alpha=1e9 vs normalized: max abs diff {gap:.1e}")
