"""Lloyd's K-means with k-means++ seeding, plus the clustering loss metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ClusteringResult, Dataset, Rng, as_generator


@dataclass(frozen=True)
class KmeansConfig:
    k: int
    max_iters: int = 300
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _sqdist(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("pkd,pkd->pk", diff, diff)


def assign(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per point; ties go to the lowest index."""
    return np.argmin(_sqdist(X, centroids), axis=1)


def update(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Cluster means. An empty cluster is re-seeded at the point farthest
    from its current centroid (earliest index on ties), one cluster at a time."""
    k, d = centroids.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d))
    np.add.at(sums, labels, X)
    new = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centroids)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        labels = labels.copy()
        for j in empty:
            dist = np.sum((X - new[labels]) ** 2, axis=1)
            # never steal the last member of another cluster
            counts = np.bincount(labels, minlength=k)
            dist[counts[labels] <= 1] = -1.0
            p = int(np.argmax(dist))
            old = labels[p]
            labels[p] = j
            new[j] = X[p]
            members = labels == old
            new[old] = X[members].mean(axis=0)
    return new


def kmeans_pp(X: np.ndarray, k: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    n = X.shape[0]
    centers = [X[gen.integers(n)]]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = gen.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), gen.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def lloyd(X: np.ndarray, init: np.ndarray, max_iters: int = 300, tol: float = 1e-9):
    """Run Lloyd iterations from ``init``; returns (centroids, labels, n_iter)."""
    C = np.array(init, dtype=float)
    labels = assign(X, C)
    it = 0
    for it in range(1, max_iters + 1):
        newC = update(X, labels, C)
        shift = np.sqrt(np.max(np.sum((newC - C) ** 2, axis=1)))
        C = newC
        new_labels = assign(X, C)
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        if not changed:
            break
        if shift <= tol:
            C = update(X, labels, C)
            break
    return C, labels, it


def cluster(data: Dataset, cfg: KmeansConfig) -> ClusteringResult:
    X = data.points
    if cfg.k > data.n_points:
        raise ValueError(f"k={cfg.k} exceeds the number of points P={data.n_points}")
    init = kmeans_pp(X, cfg.k, Rng(cfg.seed).split("kmeans++"))
    C, labels, _ = lloyd(X, init, cfg.max_iters, cfg.tol)
    return ClusteringResult(C, labels)


def clustering_loss(data: Dataset, result: ClusteringResult) -> float:
    """Mean squared distance of each point to the centroid of its label."""
    X = data.points
    if result.labels.shape[0] != X.shape[0] or result.centroids.shape[1] != X.shape[1]:
        raise ValueError("result does not match data dimensions")
    resid = X - result.centroids[result.labels]
    return float(np.einsum("pd,pd->", resid, resid) / X.shape[0])


def dp_accuracy_loss(data: Dataset, q: ClusteringResult, q_private: ClusteringResult) -> float:
    """Relative increase of the clustering loss caused by privatization."""
    r = clustering_loss(data, q)
    if r == 0:
        raise ValueError("clustering loss of the reference result is 0; relative loss undefined")
    return (clustering_loss(data, q_private) - r) / r


def match_clusters(a: ClusteringResult, b: ClusteringResult) -> np.ndarray:
    """Permutation ``perm`` pairing a's cluster k with b's cluster perm[k],
    minimizing the total squared centroid distance."""
    if a.k != b.k:
        raise ValueError("results have different K")
    cost = _sqdist(a.centroids, b.centroids)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.k, dtype=np.int64)
    perm[rows] = cols
    return perm


def match_clusters_bruteforce(a: ClusteringResult, b: ClusteringResult) -> np.ndarray:
    cost = _sqdist(a.centroids, b.centroids)
    best = min(itertools.permutations(range(a.k)), key=lambda p: cost[np.arange(a.k), p].sum())
    return np.array(best)


def align(result: ClusteringResult, perm: np.ndarray) -> ClusteringResult:
    """Relabel ``result`` so its cluster perm[k] becomes cluster k."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return ClusteringResult(result.centroids[perm], inv[result.labels])
