"""Magnitude scaling of generated cold-item embeddings.

Each nonzero row ``x`` is rescaled by ``gamma`` so that its norm moves toward
the warm mean norm ``mu_w``::

    |gamma x| - mu_w = (|x| - mu_w) / (1 + alpha)
    gamma = (|x| + alpha mu_w) / (|x| (1 + alpha))

Directions are untouched, the spread of norms shrinks by ``1 + alpha`` and the
map fixes ``|x| = mu_w``. Zero rows are left as they are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_SWEEP = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class ScalingConfig:
    alpha: float = 0.0
    sweep: tuple = field(default=DEFAULT_SWEEP)

    def validate(self) -> "ScalingConfig":
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if any(a <= 0 for a in self.sweep):
            raise ConfigError("sweep values must be positive")
        return self


@dataclass(frozen=True)
class MagnitudeStats:
    mu_w: float
    cold_magnitudes: np.ndarray
    cold_mean: float
    cold_std: float


def row_norms(matrix) -> np.ndarray:
    return np.linalg.norm(np.asarray(matrix, dtype=np.float64), axis=1)


def warm_mean_magnitude(warm_embeddings) -> float:
    arr = np.asarray(warm_embeddings, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("warm embeddings must be a non-empty matrix")
    norms = row_norms(arr)
    if not np.any(norms > 0):
        raise DataError("all warm embeddings are zero; mean magnitude undefined")
    return float(norms.mean())


def magnitude_stats(warm_embeddings, cold_embeddings) -> MagnitudeStats:
    m = row_norms(cold_embeddings)
    return MagnitudeStats(warm_mean_magnitude(warm_embeddings), m, float(m.mean()), float(m.std()))


def scaling_factor(magnitude, mu_w: float, alpha: float):
    """Per-row multiplier; vectorizes over ``magnitude``. Zero magnitude gives 1."""
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    if mu_w <= 0:
        raise DataError("mu_w must be positive")
    m = np.asarray(magnitude, dtype=np.float64)
    safe = np.where(m > 0, m, 1.0)
    gamma = np.where(m > 0, (safe + alpha * mu_w) / (safe * (1.0 + alpha)), 1.0)
    return float(gamma) if gamma.ndim == 0 else gamma


def scaled_magnitude(magnitude, mu_w: float, alpha: float):
    """Closed form of the norm after scaling: ``mu_w + (m - mu_w) / (1 + alpha)``."""
    m = np.asarray(magnitude, dtype=np.float64)
    return np.where(m > 0, mu_w + (m - mu_w) / (1.0 + alpha), 0.0)


def scale_embeddings(cold, mu_w: float, alpha: float) -> np.ndarray:
    """Apply the scaling to every nonzero row of ``cold``; ``alpha=0`` returns a copy."""
    arr = np.asarray(cold)
    if not np.all(np.isfinite(arr)):
        raise DataError("cold embeddings contain non-finite values")
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    if alpha == 0:
        return arr.copy()
    gamma = scaling_factor(row_norms(arr), mu_w, alpha)
    return (arr * gamma[:, None]).astype(arr.dtype, copy=False)


def normalize_to(cold, mu_w: float) -> np.ndarray:
    """Limit of :func:`scale_embeddings` as alpha grows: every nonzero row gets norm ``mu_w``."""
    arr = np.asarray(cold, dtype=np.float64)
    n = row_norms(arr)[:, None]
    out = np.zeros_like(arr)
    np.divide(arr * mu_w, n, out=out, where=n > 0)
    return out
