"""Centroid and label perturbation mechanisms with (epsilon, delta) accounting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import BudgetLedger, ClusteringResult, Dataset, PrivacyBudget, Rng, as_generator
from .kmeans import KmeansConfig, cluster
from .sensitivity import SensitivityReport, analyze


# --- noise specs -------------------------------------------------------------


@dataclass(frozen=True)
class WhiteNoiseSpec:
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")

    def covariance(self, n: int) -> np.ndarray:
        return self.sigma**2 * np.eye(n)

    def trace(self, n: int) -> float:
        return n * self.sigma**2

    def to_dict(self) -> dict:
        return {"kind": "white", "sigma": self.sigma}


@dataclass(frozen=True)
class ColoredNoiseSpec:
    """Precision matrix Gamma of the centroid noise N(0, Gamma^-1)."""

    gamma: np.ndarray
    gamma_c: float
    duality_gap: float = 0.0
    rank: int = -1
    closed_form_agrees: bool | None = None

    @property
    def covariance(self) -> np.ndarray:
        cov = np.linalg.inv(self.gamma)
        return (cov + cov.T) / 2

    def trace(self, n: int | None = None) -> float:
        return float(np.trace(self.covariance))

    def slack(self, diffs: np.ndarray) -> np.ndarray:
        """gamma_c - v^T Gamma v for every column v (>= 0 means feasible)."""
        return self.gamma_c - np.einsum("ip,ij,jp->p", diffs, self.gamma, diffs)

    def to_dict(self) -> dict:
        return {
            "kind": "colored",
            "gamma": self.gamma.tolist(),
            "gamma_c": self.gamma_c,
            "trace_cov": self.trace(),
            "duality_gap": self.duality_gap,
            "rank": self.rank,
            "closed_form_agrees": self.closed_form_agrees,
        }


@dataclass(frozen=True)
class LabelNoiseSpec:
    rho: float
    k: int
    sensitive_set: tuple = ()
    delta_l: int = 0

    def __post_init__(self):
        _check_label_params(self.rho, self.k)

    @property
    def pmf(self) -> np.ndarray:
        p = np.full(self.k, self.rho / (self.k - 1))
        p[0] = 1.0 - self.rho
        return p

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "k": self.k,
            "sensitive_set": list(self.sensitive_set),
            "delta_l": self.delta_l,
        }


def _check_budget(budget: PrivacyBudget):
    if budget.epsilon <= 0:
        raise ValueError("epsilon must be > 0 for the Gaussian mechanism")
    if not 0 < budget.delta < 1:
        raise ValueError("delta must lie strictly between 0 and 1 for the Gaussian mechanism")


def gamma_constant(budget: PrivacyBudget) -> float:
    """eps^2 / (2 log(2/delta)): the largest admissible v^T Gamma v."""
    _check_budget(budget)
    return budget.epsilon**2 / (2.0 * math.log(2.0 / budget.delta))


def white_sigma(sensitivity: float, budget: PrivacyBudget) -> WhiteNoiseSpec:
    """Smallest sigma with sigma >= (sensitivity/eps) sqrt(2 log(2/delta))."""
    _check_budget(budget)
    if sensitivity < 0:
        raise ValueError("sensitivity must be >= 0")
    return WhiteNoiseSpec(sensitivity / budget.epsilon * math.sqrt(2.0 * math.log(2.0 / budget.delta)))


# --- optimal precision matrix ------------------------------------------------


def _inv_sqrt_psd(R):
    ev, V = np.linalg.eigh(R)
    ev = np.maximum(ev, ev.max() * 1e-300)
    return (V / np.sqrt(ev)) @ V.T, np.sqrt(ev).sum()


def _dual_terms(C, w):
    """f(w) = Tr(R^{1/2}) and h_i = v_i^T R^{-1/2} v_i for R = sum_i w_i v_i v_i^T."""
    mu, V = np.linalg.eigh((C * w) @ C.T)
    mu = np.maximum(mu, mu.max() * 1e-300)
    Vt = V.T @ C
    h = np.sum(Vt**2 / np.sqrt(mu)[:, None], axis=0)
    return np.sqrt(mu).sum(), h, mu, Vt


def _hessian_h(mu, Vt):
    """Jacobian dh_i/dw_j via the divided differences of x^{-1/2} (Daleckii-Krein)."""
    r = 1.0 / np.sqrt(mu)
    den = mu[:, None] - mu[None, :]
    close = np.abs(den) <= 1e-12 * np.maximum(mu[:, None], mu[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(close, -0.5 * np.sqrt(mu[:, None] * mu[None, :]) ** -1.5, (r[:, None] - r[None, :]) / den)
    B = np.einsum("ai,bi->abi", Vt, Vt).reshape(-1, Vt.shape[1])
    return B.T @ (F.reshape(-1, 1) * B)


def _multiplicative(C, w, stop_gap, max_iter, kappa=2.0):
    f_prev = -np.inf
    f, h, _, _ = _dual_terms(C, w)
    gap = h.max() / f - 1.0
    for _ in range(max_iter):
        if gap <= stop_gap:
            break
        if f < f_prev * (1 - 1e-13):
            kappa = 1.0
        f_prev = f
        w = w * (h / f) ** kappa
        w /= w.sum()
        f, h, _, _ = _dual_terms(C, w)
        gap = h.max() / f - 1.0
    return w, gap


def _newton(C, w, tol, max_iter=200):
    """Projected Newton ascent of f on the simplex, restricted to the support
    of w plus any column whose h_i exceeds f."""
    P = C.shape[1]
    S = np.flatnonzero(w > 1e-6 * w.max())
    w = np.where(np.isin(np.arange(P), S), w, 0.0)
    w /= w.sum()
    best_w, best_gap = w, np.inf
    for _ in range(max_iter):
        f, h, mu, Vt = _dual_terms(C, w)
        gap = h.max() / f - 1.0
        if gap < best_gap:
            best_w, best_gap = w, gap
        if gap <= tol:
            break
        out = np.setdiff1d(np.flatnonzero(h > f * (1 + tol)), S)
        if out.size:
            S = np.union1d(S, out[np.argsort(-h[out])][:50])
        s = S.size
        Q = -0.5 * _hessian_h(mu, Vt[:, S])
        g = -0.5 * h[S]
        K = np.zeros((s + 1, s + 1))
        K[:s, :s] = Q + 1e-14 * np.trace(Q) / s * np.eye(s)
        K[:s, s] = K[s, :s] = 1.0
        step = np.linalg.lstsq(K, np.concatenate([-g, [0.0]]), rcond=None)[0][:s]
        a = 1.0
        while a > 1e-12:
            cand = w.copy()
            cand[S] = np.maximum(w[S] + a * step, 0.0)
            cand /= cand.sum()
            if _dual_terms(C, cand)[0] > f * (1 + 1e-15):
                break
            a *= 0.5
        else:
            break
        w = cand
        S = S[w[S] > 0]
    return best_w, best_gap


def _dual_ascent(C, tol, max_iter):
    """Maximize f(w) = Tr((sum_i w_i v_i v_i^T)^{1/2}) over the simplex.

    The optimal precision matrix is proportional to R(w*)^{-1/2}. Multiplicative
    updates w_i <- w_i (h_i / f)^2 find the support, projected Newton polishes
    it. max_i h_i / f - 1 is the relative gap between the rescaled feasible
    primal value and the dual bound f^2 / gamma_c.
    """
    P = C.shape[1]
    w, gap = _multiplicative(C, np.full(P, 1.0 / P), max(tol, 1e-3), max_iter)
    if gap > tol:
        w2, gap2 = _newton(C, w, tol)
        if gap2 < gap:
            w, gap = w2, gap2
    if gap > tol:
        w = 0.999 * w + 0.001 / P
        w, gap = _multiplicative(C, w, tol, max_iter)
    Rmh, f = _inv_sqrt_psd((C * w) @ C.T)
    h = np.sum((Rmh @ C) * C, axis=0)
    return Rmh, h, f, max(h.max() / f - 1.0, 0.0)


def orthogonal_closed_form(C: np.ndarray, gamma_c: float) -> np.ndarray | None:
    """Closed-form Gamma from the Kd smallest-norm independent columns.

    Uses M = (C*^T C*)^{1/2}, v = gamma_c M^{-1} 1, lambda = v^-2 and
    Gamma = R_lambda^{-1/2}, then rescales so every column is feasible.
    Exact when the selected columns are mutually orthogonal; returns None when
    the construction breaks down (negative v or no independent subset).
    """
    n = C.shape[0]
    norms = np.linalg.norm(C, axis=0)
    chosen, basis = [], np.zeros((n, 0))
    for j in np.argsort(norms, kind="stable"):
        if norms[j] == 0:
            continue
        r = C[:, j] - basis @ (basis.T @ C[:, j])
        if np.linalg.norm(r) > 1e-10 * norms[j]:
            chosen.append(int(j))
            basis = np.column_stack([basis, r / np.linalg.norm(r)])
        if len(chosen) == n:
            break
    if len(chosen) < n:
        return None
    Cs = C[:, chosen]
    ev, V = np.linalg.eigh(Cs.T @ Cs)
    M = (V * np.sqrt(np.maximum(ev, 0))) @ V.T
    v = gamma_c * np.linalg.solve(M, np.ones(n))
    if np.any(v <= 0):
        return None
    lam = v**-2.0
    R = (Cs * lam) @ Cs.T
    G, _ = _inv_sqrt_psd(R)
    G = (G + G.T) / 2
    worst = np.max(np.einsum("ip,ij,jp->p", C, G, C))
    return G * (gamma_c / worst)


def optimize_gamma(
    neighbor_diffs: np.ndarray,
    budget: PrivacyBudget,
    tol: float = 1e-8,
    max_iter: int = 20_000,
    check_closed_form: bool = True,
) -> ColoredNoiseSpec:
    """Precision matrix minimizing Tr(Gamma^-1) s.t. v^T Gamma v <= gamma_c
    for every neighbor-difference column v.

    The convex program is solved through its dual (see ``_dual_ascent``); the
    primal iterate is rescaled to be exactly feasible. If the columns do not
    span R^{Kd}, the program is solved inside their span and the orthogonal
    complement gets the span solution's largest precision eigenvalue, i.e. no
    more noise there than along the least noisy constrained direction.
    """
    gamma_c = gamma_constant(budget)
    C = np.atleast_2d(np.asarray(neighbor_diffs, dtype=float))
    n = C.shape[0]
    norms = np.linalg.norm(C, axis=0)
    if norms.size == 0 or norms.max() == 0:
        raise ValueError("all neighbor differences are zero; the centroid query needs no noise")
    C = C[:, norms > norms.max() * 1e-12]

    U, s, _ = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(s > s[0] * 1e-10))
    Cr = U[:, :rank].T @ C
    Rmh, h, f, gap = _dual_ascent(Cr, tol, max_iter)
    Gr = (Rmh + Rmh.T) / 2
    Gr *= gamma_c / np.max(np.einsum("ip,ij,jp->p", Cr, Gr, Cr)) * (1 - 1e-12)

    Ur = U[:, :rank]
    G = Ur @ Gr @ Ur.T
    if rank < n:
        Uc = U[:, rank:]
        G = G + np.linalg.eigvalsh(Gr).max() * (Uc @ Uc.T)
    G = (G + G.T) / 2

    agrees = None
    if check_closed_form and rank == n:
        Gcf = orthogonal_closed_form(C, gamma_c)
        if Gcf is not None:
            t_cf = np.trace(np.linalg.inv(Gcf))
            t_num = np.trace(np.linalg.inv(G))
            agrees = bool(abs(t_cf - t_num) <= 1e-6 * t_num)
            if agrees and t_cf < t_num:
                G = Gcf
    if gap > 1e-4:
        warnings.warn(f"colored-noise solver stopped with relative duality gap {gap:.2e}")
    return ColoredNoiseSpec(G, gamma_c, gap, rank, agrees)


# --- centroid perturbation ---------------------------------------------------


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh((cov + cov.T) / 2)
    if ev.min() < -1e-10 * max(1.0, abs(ev.max())):
        raise ValueError("noise covariance is not positive semi-definite")
    return V * np.sqrt(np.maximum(ev, 0.0))


def sample_noise(spec, n: int, rng, size: int | None = None) -> np.ndarray:
    gen = as_generator(rng)
    shape = (n,) if size is None else (size, n)
    if isinstance(spec, WhiteNoiseSpec):
        return spec.sigma * gen.standard_normal(shape)
    if isinstance(spec, ColoredNoiseSpec):
        if np.linalg.eigvalsh(spec.gamma).min() <= 0:
            raise ValueError("Gamma is not positive definite")
        L = _psd_factor(spec.covariance)
        z = gen.standard_normal(shape)
        return z @ L.T
    raise TypeError(f"unknown noise spec {type(spec).__name__}")


def perturb_centroids(result: ClusteringResult, spec, rng) -> ClusteringResult:
    """Add one draw of centroid noise to the stacked Kd centroid vector."""
    eta = sample_noise(spec, result.stacked.size, rng)
    return result.replace(centroids=(result.stacked + eta).reshape(result.centroids.shape))


# --- label mechanism ---------------------------------------------------------


def _check_label_params(rho, k):
    if k < 2:
        raise ValueError("label mechanism needs K >= 2")
    if not 0 < rho < 0.5:
        raise ValueError(f"rho must lie in (0, 0.5), got {rho}")


def label_log_ratio(rho: float, k: int) -> float:
    """log((1/rho - 1)(K - 1)): leakage per label that differs."""
    _check_label_params(rho, k)
    return math.log((1.0 / rho - 1.0) * (k - 1))


def label_delta(rho: float, k: int, delta_l: int, epsilon_l: float) -> float:
    """Probability that the label leakage reaches epsilon_l for a neighbor
    differing in ``delta_l`` labels.

    With M0 noise entries equal to 0 and Mc entries cancelling the label
    difference, (M0, Mc, rest) is multinomial(delta_l; 1-rho, rho/(K-1),
    rho(K-2)/(K-1)) and the leakage is (M0 - Mc) * log_ratio; the result is
    P(M0 - Mc >= epsilon_l / log_ratio), summed in log space. For K = 2 the
    third category has probability 0 and only rest = 0 terms remain.
    """
    _check_label_params(rho, k)
    if delta_l < 0:
        raise ValueError("delta_l must be >= 0")
    if epsilon_l < 0:
        raise ValueError("epsilon_l must be >= 0")
    if delta_l == 0:
        return 0.0
    ell = epsilon_l / label_log_ratio(rho, k)
    if ell > delta_l:
        return 0.0
    need = math.ceil(ell - 1e-12 * max(1.0, ell))
    lp0 = math.log1p(-rho)
    lpc = math.log(rho / (k - 1))
    lpr = math.log(rho * (k - 2) / (k - 1)) if k > 2 else -math.inf
    D = delta_l
    terms = []
    for mc in range(D + 1):
        for m0 in range(max(need + mc, 0), D - mc + 1):
            rest = D - m0 - mc
            if rest and k == 2:
                continue
            t = gammaln(D + 1) - gammaln(m0 + 1) - gammaln(mc + 1) - gammaln(rest + 1)
            t += m0 * lp0 + mc * lpc + (rest * lpr if rest else 0.0)
            terms.append(t)
    if not terms:
        return 0.0
    return float(min(1.0, math.exp(logsumexp(terms))))


def label_delta_worst(rho: float, k: int, delta_l: int, epsilon_l: float) -> float:
    """Largest label_delta over neighbors differing in 1..delta_l labels.

    label_delta is not monotone in the number of differing labels (e.g. K=2,
    rho=0.25, eps=1: 0.75 for one label, 0.5625 for two), so a release with
    label sensitivity delta_l must be charged this supremum.
    """
    return max((label_delta(rho, k, m, epsilon_l) for m in range(1, delta_l + 1)), default=0.0)


def rho_for_zero_delta(epsilon_l: float, delta_l: int, k: int) -> float:
    """Smallest rho (up to a 1e-9 relative nudge) with label_delta == 0,
    i.e. epsilon_l > delta_l log((1 - rho)(K - 1)/rho)."""
    if delta_l <= 0:
        raise ValueError("delta_l = 0: the label query is insensitive and needs no noise")
    if k < 2:
        raise ValueError("label mechanism needs K >= 2")
    rho = (k - 1) / (k - 1 + math.exp(epsilon_l / delta_l))
    rho = rho * (1 + 1e-9)
    if not 0 < rho < 0.5:
        raise ValueError(
            f"epsilon_l={epsilon_l} too small for delta=0 at K={k}, delta_l={delta_l}: needs rho={rho:.4g} >= 0.5"
        )
    assert label_delta(rho, k, delta_l, epsilon_l) == 0.0
    return rho


def rho_for_delta(epsilon_l: float, delta_l: int, k: int, target: float) -> float:
    """Smallest rho on a bisection grid whose label_delta_worst is <= target."""
    if target <= 0:
        return rho_for_zero_delta(epsilon_l, delta_l, k)
    lo, hi = 1e-12, 0.5 - 1e-12
    if label_delta_worst(hi, k, delta_l, epsilon_l) > target:
        raise ValueError("no rho < 0.5 reaches the requested delta_l")
    for _ in range(200):
        mid = (lo + hi) / 2
        if label_delta_worst(mid, k, delta_l, epsilon_l) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def sample_label_noise(spec: LabelNoiseSpec, size, rng) -> np.ndarray:
    gen = as_generator(rng)
    nonzero = gen.random(size) < spec.rho
    offset = gen.integers(1, spec.k, size=size)
    return np.where(nonzero, offset, 0)


def perturb_labels(result: ClusteringResult, spec: LabelNoiseSpec, rng) -> ClusteringResult:
    """labels[p] <- (labels[p] + nu_p) mod K for p in the sensitive set."""
    idx = np.asarray(spec.sensitive_set, dtype=np.int64)
    labels = result.labels.copy()
    if idx.size:
        nu = sample_label_noise(spec, idx.size, rng)
        labels[idx] = (labels[idx] + nu) % spec.k
    return result.replace(labels=labels)


# --- full mechanism ----------------------------------------------------------


@dataclass(frozen=True)
class DPKmeansOutput:
    private: ClusteringResult
    budget: PrivacyBudget
    sensitivity: SensitivityReport
    base: ClusteringResult
    centroid_spec: object
    label_spec: LabelNoiseSpec | None
    ledger: BudgetLedger = field(compare=False, default_factory=BudgetLedger)

    def __iter__(self):
        return iter((self.private, self.budget, self.sensitivity))


def centroid_spec_for(report: SensitivityReport, budget: PrivacyBudget, noise: str):
    if noise == "white" or report.delta_c == 0:
        return white_sigma(report.delta_c, budget)
    if noise == "colored":
        return optimize_gamma(report.neighbor_diffs, budget)
    raise ValueError(f"noise must be 'white' or 'colored', got {noise!r}")


def label_spec_for(
    report: SensitivityReport, k: int, budget_l: PrivacyBudget, rho: float | None
) -> tuple[LabelNoiseSpec | None, float]:
    """Label noise spec and the delta_l it actually achieves.

    ``rho=None`` picks the smallest rho reaching budget_l.delta (0 by default).
    """
    if report.delta_l == 0:
        return None, 0.0
    if rho is None:
        rho = rho_for_delta(budget_l.epsilon, report.delta_l, k, budget_l.delta)
    spec = LabelNoiseSpec(rho, k, report.sensitive_set, report.delta_l)
    return spec, label_delta_worst(rho, k, report.delta_l, budget_l.epsilon)


def dp_kmeans(
    data: Dataset,
    cfg: KmeansConfig,
    budget_c: PrivacyBudget,
    budget_l: PrivacyBudget,
    noise: str = "colored",
    rho: float | None = None,
    rng: Rng | None = None,
    base: ClusteringResult | None = None,
    report: SensitivityReport | None = None,
) -> DPKmeansOutput:
    """Cluster, measure sensitivity, perturb centroids and labels.

    The returned budget is (eps_c + eps_l, delta_c + delta_l) where delta_l is
    the value the label mechanism achieves at the chosen rho.
    """
    rng = rng if rng is not None else Rng(cfg.seed)
    if base is None:
        base = cluster(data, cfg)
    if report is None:
        report = analyze(data, base, cfg)
    cspec = centroid_spec_for(report, budget_c, noise)
    private = perturb_centroids(base, cspec, rng.split("centroids"))
    lspec, achieved = label_spec_for(report, base.k, budget_l, rho)
    if lspec is not None:
        private = perturb_labels(private, lspec, rng.split("labels"))
    ledger = BudgetLedger()
    ledger.charge("centroids", budget_c)
    ledger.charge("labels", PrivacyBudget(budget_l.epsilon, achieved))
    return DPKmeansOutput(private, ledger.total, report, base, cspec, lspec, ledger)
