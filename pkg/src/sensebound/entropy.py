"""Differential entropy estimators.

All estimators here return nats; callers convert to bits at public
boundaries via :func:`nats_to_bits`.
"""

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .errors import SingularCovariance

LN2 = float(np.log(2.0))


def nats_to_bits(h: float) -> float:
    return float(h) / LN2


def bits_to_nats(h: float) -> float:
    return float(h) * LN2


def gaussian_entropy_nats(cov) -> float:
    """Entropy of N(mu, cov): 0.5 * log((2*pi*e)^n det(cov))."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovariance(f"covariance determinant is not positive (sign={sign})")
    return 0.5 * (n * np.log(2.0 * np.pi * np.e) + logdet)


def grid_entropy_nats(density, cell_volume: float) -> float:
    """Plug-in entropy of a gridded density: -sum(d_i * dV * log d_i)."""
    d = np.asarray(density, dtype=float).ravel()
    pos = d[d > 0.0]
    return float(-np.sum(pos * np.log(pos)) * cell_volume)


def knn_entropy_nats(samples, k: int = 4) -> float:
    """Kozachenko-Leonenko k-NN entropy estimate for equal-weight samples.

    Uses the Chebyshev norm, for which the unit-ball volume term is
    d * log(2). A deterministic jitter (fixed internal seed) breaks ties
    between duplicated samples so the k-th neighbour distance stays
    positive; the jitter scale is far below any meaningful sample spread.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    # keep the jitter above the float spacing at the data's magnitude even
    # when the spread collapses, else exact duplicates survive it
    scale = np.maximum(np.std(x, axis=0), 1e-4 * (1.0 + np.abs(x).max(axis=0)))
    jitter_rng = np.random.default_rng(0x5EED)
    xj = x + 1e-10 * scale * jitter_rng.standard_normal(x.shape)
    tree = cKDTree(xj)
    dist, _ = tree.query(xj, k=k + 1, p=np.inf)
    eps = dist[:, k]
    return float(digamma(n) - digamma(k) + d * np.log(2.0) + d * np.mean(np.log(eps)))
