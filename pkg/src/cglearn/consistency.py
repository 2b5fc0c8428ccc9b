"""Per-feature gradient agreement across environments.

Every function here takes per-environment values with environments on axis 0,
so a ``(m,)`` vector describes one feature and an ``(m, d)`` matrix describes
``d`` features at once. The linear trainer feeds raw gradients, the MLP
trainer feeds L2 norms of first-layer gradient rows; the statistics are the
same either way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12

DEFAULT_THRESHOLDS = (0.25, 1.0, 4.0, 16.0, 64.0)


def _as_sample(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0 or arr.shape[0] == 0:
        raise ValueError("gradient sample is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("gradient sample contains non-finite entries")
    return arr


def mean_gradient(values) -> np.ndarray | float:
    """Mean over environments (axis 0)."""
    arr = _as_sample(values)
    out = arr.sum(axis=0) / arr.shape[0]
    return float(out) if np.ndim(out) == 0 else out


def std_gradient(values) -> np.ndarray | float:
    """Population standard deviation over environments (divisor m, not m - 1)."""
    arr = _as_sample(values)
    mu = arr.sum(axis=0) / arr.shape[0]
    out = np.sqrt(((arr - mu) ** 2).sum(axis=0) / arr.shape[0])
    return float(out) if np.ndim(out) == 0 else out


def consistency_ratio(mu, sigma) -> np.ndarray | float:
    # eps keeps zero-variance gradients (perfect agreement) admissible
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    out = np.abs(np.asarray(mu, dtype=float)) / (sigma + EPS)
    return float(out) if np.ndim(out) == 0 else out


def consistency_mask(ratios, threshold: float) -> np.ndarray:
    """1 where ratio >= threshold (inclusive), else 0."""
    ratios = np.asarray(ratios, dtype=float)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return (ratios >= threshold).astype(np.int8)


@dataclass(frozen=True)
class ConsistencyStats:
    mu: np.ndarray
    sigma: np.ndarray
    ratio: np.ndarray
    mask: np.ndarray
    threshold: float

    @classmethod
    def from_samples(cls, values, threshold: float) -> "ConsistencyStats":
        """Statistics for an ``(m, d)`` matrix of per-environment values, m >= 2."""
        arr = np.atleast_2d(_as_sample(values).T).T
        if arr.shape[0] < 2:
            raise ValueError("consistency needs at least two environments")
        mu = np.atleast_1d(mean_gradient(arr))
        sigma = np.atleast_1d(std_gradient(arr))
        ratio = np.atleast_1d(consistency_ratio(mu, sigma))
        return cls(mu, sigma, ratio, consistency_mask(ratio, threshold), float(threshold))
