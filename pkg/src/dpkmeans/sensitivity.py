"""Leave-one-out neighbor analysis of the K-means query."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ClusteringResult, Dataset
from .kmeans import KmeansConfig, align, lloyd, match_clusters


@dataclass(frozen=True)
class SensitivityReport:
    """Empirical sensitivities over the P remove-one neighbors.

    neighbor_diffs is Kd x P; column p is c(X) - c(X without p) after the
    neighbor's clusters were matched to the base clustering.
    changed_labels[p] lists the points whose label flips when p is removed.
    """

    delta_c: float
    delta_l: int
    sensitive_set: tuple
    neighbor_diffs: np.ndarray
    changed_labels: tuple = ()

    @property
    def worst_neighbor(self) -> int:
        return int(np.argmax(np.linalg.norm(self.neighbor_diffs, axis=0)))

    def to_dict(self) -> dict:
        return {
            "delta_c": self.delta_c,
            "delta_l": self.delta_l,
            "sensitive_set": list(self.sensitive_set),
            "neighbor_diffs": self.neighbor_diffs.tolist(),
            "changed_labels": [list(c) for c in self.changed_labels],
            "worst_neighbor_index": self.worst_neighbor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivityReport":
        return cls(
            float(d["delta_c"]),
            int(d["delta_l"]),
            tuple(d["sensitive_set"]),
            np.asarray(d["neighbor_diffs"], dtype=float),
            tuple(tuple(c) for c in d.get("changed_labels", ())),
        )


def neighbor_clustering(
    data: Dataset, base: ClusteringResult, removed: int, max_iters: int = 300, tol: float = 1e-9
) -> ClusteringResult:
    """Re-cluster X without point ``removed``, warm-started from base and
    aligned to base's cluster identities. Labels cover the P-1 kept points."""
    if not 0 <= removed < data.n_points:
        raise IndexError(f"removed index {removed} outside [0, {data.n_points})")
    X = np.delete(data.points, removed, axis=0)
    C, labels, _ = lloyd(X, base.centroids, max_iters, tol)
    nb = ClusteringResult(C, labels)
    return align(nb, match_clusters(base, nb))


def _one(data, base, p, max_iters, tol):
    nb = neighbor_clustering(data, base, p, max_iters, tol)
    diff = base.stacked - nb.stacked
    kept = np.delete(np.arange(data.n_points), p)
    flipped = kept[base.labels[kept] != nb.labels]
    return diff, flipped


def analyze(
    data: Dataset,
    base: ClusteringResult,
    cfg: KmeansConfig | None = None,
    n_jobs: int = 1,
) -> SensitivityReport:
    """Run every leave-one-out re-clustering and assemble the report."""
    max_iters = cfg.max_iters if cfg else 300
    tol = cfg.tol if cfg else 1e-9
    P = data.n_points
    work = lambda p: _one(data, base, p, max_iters, tol)  # noqa: E731
    if n_jobs == 1:
        out = [work(p) for p in range(P)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(work, range(P)))
    diffs = np.column_stack([o[0] for o in out])
    changed = tuple(tuple(int(i) for i in o[1]) for o in out)
    sensitive = sorted(set().union(*[set(c) for c in changed]))
    delta_c = float(np.max(np.linalg.norm(diffs, axis=0)))
    # every flipped point is in the sensitive set by construction
    delta_l = max((len(c) for c in changed), default=0)
    return SensitivityReport(delta_c, int(delta_l), tuple(sensitive), diffs, changed)


def knn_mean_distance(X: np.ndarray, k_nn: int) -> np.ndarray:
    sq = np.sum(X**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    nearest = np.partition(d2, k_nn - 1, axis=1)[:, :k_nn]
    return np.sqrt(nearest).mean(axis=1)


def filter_outliers(data: Dataset, k_nn: int = 20, threshold: float = 0.995):
    """Drop points whose mean distance to their k_nn nearest neighbors exceeds
    the ``threshold`` quantile (nearest-rank) of that statistic.

    Returns (reduced dataset, removed ids).
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if not 1 <= k_nn < data.n_points:
        raise ValueError(f"k_nn must lie in [1, P), got {k_nn}")
    stat = knn_mean_distance(data.points, k_nn)
    cut = np.quantile(stat, threshold, method="nearest")
    drop = stat > cut
    removed = tuple(data.ids[i] for i in np.flatnonzero(drop))
    return data.subset(~drop), removed
