"""Pseudo-environments for real tabular data: K-means with silhouette model selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .datasets import EnvironmentSet, TabularDataset


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    centroids: np.ndarray
    silhouette: float = float("nan")
    wcss: float = float("nan")
    history: tuple[float, ...] = field(default=(), compare=False)


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: fall back to unused rows
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    k = centers.shape[0]
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, centers)
        new_labels = d2.argmin(1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # re-seed an empty cluster with the point farthest from its centre
            far = int(d2[np.arange(len(x)), labels].argmax())
            labels[far] = c
            counts = np.bincount(labels, minlength=k)
        centers = np.array([x[labels == c].mean(0) for c in range(k)])
    labels = _sq_dists(x, centers).argmin(1)
    wcss = float(_sq_dists(x, centers)[np.arange(len(x)), labels].sum())
    return labels, centers, wcss, history


def kmeans(features: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` runs by WCSS."""
    x = np.asarray(features, dtype=float)
    n = x.shape[0]
    if k < 2 or n < k:
        raise ClusteringError(f"need 2 <= k <= n, got k={k}, n={n}")
    if np.all(x == x[0]):
        raise ClusteringError("all rows are identical")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, centers, wcss, history = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if np.bincount(labels, minlength=k).min() == 0:
            continue
        if best is None or wcss < best.wcss:
            best = ClusterAssignment(labels, k, centers, wcss=wcss, history=tuple(history))
    if best is None:
        raise ClusteringError(f"could not find {k} nonempty clusters")
    return best


def silhouette_score(features: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette width with Euclidean distances; singletons score 0."""
    x = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    n = len(x)
    k = len(uniq)
    sizes = np.bincount(inv, minlength=k).astype(float)
    sums = np.zeros((n, k))
    for start in range(0, n, 2048):
        # cdist, not the expanded form: self-distances must come out exactly 0
        block = cdist(x[start:start + 2048], x)
        for c in range(k):
            sums[start:start + 2048, c] = block[:, inv == c].sum(1)
    own = sizes[inv]
    a = np.where(own > 1, sums[np.arange(n), inv] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes
    other[np.arange(n), inv] = np.inf
    b = other.min(1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def standardize_columns(x: np.ndarray) -> np.ndarray:
    sd = x.std(0)
    return (x - x.mean(0)) / np.where(sd > 0, sd, 1.0)


def build_environments(dataset: TabularDataset, k_range: tuple[int, int] = (3, 10),
                       seed: int = 0, restarts: int = 10) -> tuple[EnvironmentSet, ClusterAssignment]:
    """Cluster standardized features (never the target) for each k in the
    inclusive range; keep the k with the best silhouette, ties to the smaller k."""
    lo, hi = k_range
    if lo < 2 or hi < lo or hi >= dataset.n:
        raise ValueError(f"k_range {k_range} must lie within [2, {dataset.n})")
    x = standardize_columns(dataset.features)
    best = None
    for k in range(lo, hi + 1):
        fit = kmeans(x, k, seed=seed, restarts=restarts)
        score = silhouette_score(x, fit.labels)
        if best is None or score > best.silhouette:
            best = ClusterAssignment(fit.labels, k, fit.centroids, score, fit.wcss, fit.history)
    envs = EnvironmentSet(tuple(dataset.take(np.flatnonzero(best.labels == c)) for c in range(best.k)))
    return envs, best
