"""Per-cluster log-normal load-profile synthesis with DP mean and covariance."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BudgetLedger, ClusteringResult, Dataset, PrivacyBudget, Rng, as_generator, fmt
from .mechanisms import white_sigma

WISHART_CONST = 1.5


@dataclass(frozen=True)
class LogNormalClusterModel:
    mu: np.ndarray
    sigma_mat: np.ndarray
    alpha: float
    n_k: int
    cluster: int = 0
    diagonal_only: bool = False
    min_eig_before_projection: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster,
            "mu": self.mu.tolist(),
            "sigma_mat": self.sigma_mat.tolist(),
            "alpha": self.alpha,
            "n_k": self.n_k,
            "diagonal_only": self.diagonal_only,
            "min_eig_before_projection": self.min_eig_before_projection,
            **self.meta,
        }


def default_alpha(points: np.ndarray) -> float:
    """ceil(1 - min(data)), at least 1, so every shifted value is >= 1."""
    return float(max(1.0, math.ceil(1.0 - float(np.min(points)))))


def _log_shift(X: np.ndarray, alpha: float, ids=None) -> np.ndarray:
    shifted = X + alpha
    if np.any(shifted <= 0):
        r, c = np.unravel_index(int(np.argmin(shifted)), shifted.shape)
        who = ids[r] if ids is not None else r
        raise ValueError(
            f"log of nonpositive value at row {who}, column {c} (x={X[r, c]:g}, alpha={alpha:g}); "
            f"alpha must exceed {-float(np.min(X)):g}"
        )
    return np.log(shifted)


def _project_psd(S: np.ndarray):
    S = (S + S.T) / 2
    ev, V = np.linalg.eigh(S)
    P = (V * np.maximum(ev, 0.0)) @ V.T
    return (P + P.T) / 2, float(ev.min())


def wishart_noise(d: int, scale: float, df: int, rng) -> np.ndarray:
    """Sum of ``df`` outer products of N(0, scale I) vectors."""
    Z = as_generator(rng).standard_normal((df, d)) * math.sqrt(scale)
    return Z.T @ Z


def fit_cluster(
    data: Dataset,
    labels,
    k: int,
    alpha: float,
    budget_mean: PrivacyBudget | None,
    budget_cov: PrivacyBudget | None,
    rng,
    wishart_const: float = WISHART_CONST,
) -> LogNormalClusterModel:
    """Fit the log-domain Gaussian of cluster ``k``.

    ``budget_mean=None`` / ``budget_cov=None`` switch the respective noise off.
    The mean gets white Gaussian noise calibrated to the leave-one-out
    sensitivity of the log-domain mean. The covariance gets a Wishart draw
    with d+1 degrees of freedom and scale (wishart_const B^2 / (n_k eps)) I,
    B the largest row norm of the log data, then is clipped to PSD.
    Clusters with fewer than d+1 members keep only the diagonal.
    """
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == k)
    n_k = members.size
    d = data.dim
    if n_k == 0:
        raise ValueError(f"cluster {k} is empty")
    if n_k < 2:
        raise ValueError(f"cluster {k} has a single member; covariance cannot be estimated")
    Y = _log_shift(data.points[members], alpha, [data.ids[i] for i in members])
    rng = rng if isinstance(rng, Rng) else Rng(int(as_generator(rng).integers(2**63)))
    meta = {"wishart_const": wishart_const, "wishart_df": d + 1}

    mu = Y.mean(axis=0)
    if budget_mean is not None:
        sens = float(np.max(np.linalg.norm(Y - mu, axis=1))) / (n_k - 1)
        sigma = white_sigma(sens, budget_mean).sigma
        mu = mu + sigma * rng.split("mean").generator.standard_normal(d)
        meta.update(mean_sigma=sigma, mean_sensitivity=sens, budget_mean=budget_mean.to_dict())

    Yc = Y - Y.mean(axis=0)
    S = Yc.T @ Yc / n_k
    if budget_cov is not None:
        if budget_cov.epsilon <= 0:
            raise ValueError("covariance budget needs epsilon > 0")
        B = float(np.max(np.linalg.norm(Y, axis=1)))
        scale = wishart_const * B**2 / (n_k * budget_cov.epsilon)
        S = S + wishart_noise(d, scale, d + 1, rng.split("cov"))
        meta.update(wishart_scale=scale, wishart_bound=B, budget_cov=budget_cov.to_dict())
    diagonal = n_k < d + 1
    if diagonal:
        warnings.warn(f"cluster {k}: n_k={n_k} < d+1={d + 1}; using a diagonal covariance")
        S = np.diag(np.diag(S))
    S, min_eig = _project_psd(S)
    return LogNormalClusterModel(mu, S, float(alpha), int(n_k), int(k), diagonal, min_eig, meta)


def sample_profiles(model: LogNormalClusterModel, n: int, rng) -> np.ndarray:
    """exp(N(mu, sigma_mat)) - alpha, n rows."""
    d = model.mu.size
    ev, V = np.linalg.eigh((model.sigma_mat + model.sigma_mat.T) / 2)
    if ev.min() < -1e-10 * max(1.0, abs(ev.max())):
        raise ValueError("sigma_mat is not positive semi-definite")
    L = V * np.sqrt(np.maximum(ev, 0.0))
    z = as_generator(rng).standard_normal((n, d))
    out = np.exp(model.mu + z @ L.T) - model.alpha
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite synthetic values")
    return out


def allocate_counts(total: int, populations) -> list[int]:
    """Split ``total`` samples proportionally to populations (largest remainder)."""
    pop = np.asarray(populations, dtype=float)
    if total == 0 or pop.sum() == 0:
        return [0] * len(pop)
    raw = total * pop / pop.sum()
    base = np.floor(raw).astype(int)
    extra = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:extra]] += 1
    return base.tolist()


@dataclass(frozen=True)
class SynthBudgets:
    mean: PrivacyBudget | None
    cov: PrivacyBudget | None
    upstream: tuple = ()


@dataclass
class SynthOutput:
    samples: np.ndarray
    clusters: np.ndarray
    models: list
    ledger: BudgetLedger

    @property
    def budget(self) -> PrivacyBudget:
        return self.ledger.total


def generate_all(
    data: Dataset,
    clustering: ClusteringResult,
    counts,
    alpha: float | None,
    budgets: SynthBudgets,
    rng: Rng,
    wishart_const: float = WISHART_CONST,
) -> SynthOutput:
    """Fit every cluster and draw counts[k] profiles from it.

    Each fitted cluster charges its mean and covariance budgets; upstream
    budgets (e.g. the clustering release) are charged once on top.
    """
    K = clustering.k
    counts = list(counts)
    if len(counts) != K:
        raise ValueError(f"need {K} counts, got {len(counts)}")
    if alpha is None:
        alpha = default_alpha(data.points)
    ledger = BudgetLedger()
    for i, b in enumerate(budgets.upstream):
        ledger.charge(f"upstream[{i}]", b)
    d = data.dim
    samples, tags, models = [], [], []
    sizes = np.bincount(clustering.labels, minlength=K)
    for k in range(K):
        if sizes[k] < 2:
            if counts[k] > 0:
                raise ValueError(f"cluster {k} has {sizes[k]} members; cannot synthesize {counts[k]} samples")
            warnings.warn(f"cluster {k} has {sizes[k]} members; skipped")
            continue
        sub = rng.split(f"cluster{k}")
        model = fit_cluster(
            data, clustering.labels, k, alpha, budgets.mean, budgets.cov, sub.split("fit"), wishart_const
        )
        if budgets.mean is not None:
            ledger.charge(f"cluster{k}.mean", budgets.mean)
        if budgets.cov is not None:
            ledger.charge(f"cluster{k}.cov", budgets.cov)
        models.append(model)
        if counts[k]:
            samples.append(sample_profiles(model, counts[k], sub.split("sample")))
            tags.append(np.full(counts[k], k))
    X = np.vstack(samples) if samples else np.zeros((0, d))
    t = np.concatenate(tags) if tags else np.zeros(0, dtype=int)
    return SynthOutput(X, t, models, ledger)


def write_samples_csv(path, out: SynthOutput, d: int) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "sample_id"] + [f"t{j}" for j in range(d)])
        next_id: dict[int, int] = {}
        for k, row in zip(out.clusters, out.samples):
            sid = next_id.get(int(k), 0)
            next_id[int(k)] = sid + 1
            w.writerow([int(k), sid] + [fmt(v) for v in row])
