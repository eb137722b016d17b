"""Empirical privacy audits and the two attacks on non-private releases."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import as_generator
from .mechanisms import ColoredNoiseSpec, LabelNoiseSpec, WhiteNoiseSpec, label_log_ratio, sample_label_noise


# --- differencing attack -----------------------------------------------------


def infer_removed_point(q_full, q_minus, p: int):
    """Recover the dropped record from the mean of P records and the mean of
    the remaining P-1: x0 = P q_full - (P-1) q_minus."""
    if p < 2:
        raise ValueError("p must be >= 2")
    return p * np.asarray(q_full, dtype=float) - (p - 1) * np.asarray(q_minus, dtype=float)


def satisfies_15_15(values) -> bool:
    """At least 15 records and no record holding 15% or more of the total."""
    v = np.asarray(values, dtype=float)
    if v.ndim > 1:
        v = v.sum(axis=1)
    total = v.sum()
    return v.size >= 15 and total > 0 and bool(np.all(v < 0.15 * total))


def differencing_demo(points: np.ndarray, drop: int = 0) -> dict:
    X = np.asarray(points, dtype=float)
    P = X.shape[0]
    q_full = X.mean(axis=0)
    q_minus = np.delete(X, drop, axis=0).mean(axis=0)
    rec = infer_removed_point(q_full, q_minus, P)
    err = float(np.linalg.norm(rec - X[drop]) / max(np.linalg.norm(X[drop]), 1e-300))
    return {
        "P": P,
        "dropped_index": drop,
        "complies_15_15": satisfies_15_15(X),
        "recovered": np.atleast_1d(rec).tolist(),
        "dropped_record": np.atleast_1d(X[drop]).tolist(),
        "relative_error": err,
    }


# --- Savitzky-Golay ----------------------------------------------------------


def auto_window(n: int, preferred: int = 300, frac: float = 0.3) -> int:
    """``preferred`` when it fits in the series, otherwise ~frac of its length."""
    w = preferred if preferred <= n else max(3, int(round(frac * n)))
    if w % 2 == 0:
        w += 1
    return min(w, n if n % 2 else n - 1)


def savgol_filter(series, window: int, order: int) -> np.ndarray:
    """Local least-squares polynomial smoothing.

    An even window is rounded up to the next odd number. Near the edges the
    polynomial is fit on the part of the window inside the series.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if window % 2 == 0:
        window += 1
    if window > n:
        raise ValueError(f"window {window} exceeds series length {n}")
    if not 0 <= order < window:
        raise ValueError("need 0 <= order < window")
    h = window // 2
    offsets = np.arange(-h, h + 1)
    A = np.vander(offsets, order + 1, increasing=True)
    coeffs = np.linalg.pinv(A)[0]
    out = np.empty(n)
    if n > 2 * h:
        out[h : n - h] = np.convolve(y, coeffs[::-1], mode="valid")
    for i in list(range(min(h, n))) + list(range(max(n - h, h), n)):
        lo, hi = max(0, i - h), min(n, i + h + 1)
        t = np.arange(lo, hi) - i
        deg = min(order, hi - lo - 1)
        B = np.vander(t, deg + 1, increasing=True)
        out[i] = np.linalg.lstsq(B, y[lo:hi], rcond=None)[0][0]
    return out


def smooth_daily_profile(n: int = 1440) -> np.ndarray:
    """A clean residential-looking daily curve in kW (morning and evening peaks)."""
    t = np.linspace(0.0, 24.0, n, endpoint=False)
    base = 0.6 + 0.15 * np.cos(2 * np.pi * (t - 3) / 24)
    morning = 0.9 * np.exp(-0.5 * ((t - 7.5) / 1.3) ** 2)
    evening = 1.8 * np.exp(-0.5 * ((t - 19.0) / 2.2) ** 2)
    return base + morning + evening


def filtering_demo(sigma: float = 0.75, n: int = 1440, order: int = 1, rng=0, window: int | None = None) -> dict:
    clean = smooth_daily_profile(n)
    noisy = clean + sigma * as_generator(rng).standard_normal(n)
    w = auto_window(n) if window is None else window
    filtered = savgol_filter(noisy, w, order)
    rmse_noisy = float(np.sqrt(np.mean((noisy - clean) ** 2)))
    rmse_filtered = float(np.sqrt(np.mean((filtered - clean) ** 2)))
    return {
        "n": n,
        "sigma": sigma,
        "window": w,
        "order": order,
        "rmse_noisy": rmse_noisy,
        "rmse_filtered": rmse_filtered,
        "reduction": 1.0 - rmse_filtered / rmse_noisy,
    }


# --- leakage estimation ------------------------------------------------------


@dataclass(frozen=True)
class LeakageEstimate:
    epsilon: float
    prob_exceed: float
    mc_stderr: float
    n_trials: int

    def certifies(self, delta: float, n_se: float = 3.0) -> bool:
        return self.prob_exceed <= delta + n_se * self.mc_stderr

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "prob_exceed": self.prob_exceed,
            "stderr": self.mc_stderr,
            "n_trials": self.n_trials,
        }


def _estimate(hits: int, n: int, epsilon: float) -> LeakageEstimate:
    p = hits / n
    se = math.sqrt(max(p * (1 - p), 0.0) / n)
    return LeakageEstimate(float(epsilon), p, se, int(n))


class GaussianAnswer:
    """Output law N(mean, covariance) of a Gaussian centroid release."""

    def __init__(self, mean, spec):
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        n = self.mean.size
        if isinstance(spec, WhiteNoiseSpec):
            if spec.sigma <= 0:
                raise ValueError("zero-variance release has no likelihood ratio")
            self.precision = np.eye(n) / spec.sigma**2
            self.factor = spec.sigma * np.eye(n)
        elif isinstance(spec, ColoredNoiseSpec):
            self.precision = spec.gamma
            ev, V = np.linalg.eigh(spec.covariance)
            if ev.min() <= 0:
                raise ValueError("singular noise covariance")
            self.factor = V * np.sqrt(ev)
        else:
            raise TypeError(type(spec).__name__)

    def sample(self, gen, n):
        return self.mean + gen.standard_normal((n, self.mean.size)) @ self.factor.T

    def logpdf(self, q):
        r = q - self.mean
        return -0.5 * np.einsum("ti,ij,tj->t", r, self.precision, r)


class LabelAnswer:
    """Output law of the modulo-K label release restricted to the sensitive set."""

    def __init__(self, labels, spec: LabelNoiseSpec):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.spec = spec
        self.log_ratio = label_log_ratio(spec.rho, spec.k)

    def sample(self, gen, n):
        nu = sample_label_noise(self.spec, (n, self.labels.size), gen)
        return (self.labels + nu) % self.spec.k

    def logpdf(self, q):
        nonzero = np.count_nonzero((q - self.labels) % self.spec.k, axis=1)
        # log f = const - ||nu||_0 * log_ratio
        return -nonzero * self.log_ratio


def estimate_leakage(x_dist, x_prime_dist, epsilon: float, n_trials: int, rng, chunk: int = 20_000) -> LeakageEstimate:
    """Monte-Carlo estimate of Pr(L > epsilon), L = log f(q|X) - log f(q|X'),
    with q drawn from the release under X."""
    if n_trials < 10_000:
        raise ValueError("n_trials must be >= 1e4")
    gen = as_generator(rng)
    hits = 0
    done = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        q = x_dist.sample(gen, m)
        L = x_dist.logpdf(q) - x_prime_dist.logpdf(q)
        if not np.all(np.isfinite(L)):
            raise FloatingPointError("likelihood ratio not evaluable")
        hits += int(np.count_nonzero(L > epsilon))
        done += m
    return _estimate(hits, n_trials, epsilon)


def gaussian_leakage_all(diffs: np.ndarray, spec, epsilon: float, n_trials: int, rng, chunk: int = 256) -> list[LeakageEstimate]:
    """Leakage estimates for every neighbor column at once.

    For q = c + eta and neighbor mean c' = c - v, L = v^T Gamma eta + v^T Gamma v / 2;
    one noise sample is shared by all neighbors (each estimate stays unbiased).
    """
    diffs = np.atleast_2d(diffs)
    n, P = diffs.shape
    ans = GaussianAnswer(np.zeros(n), spec)
    eta = as_generator(rng).standard_normal((n_trials, n)) @ ans.factor.T
    out = []
    for s in range(0, P, chunk):
        V = diffs[:, s : s + chunk]
        GV = ans.precision @ V
        L = eta @ GV + 0.5 * np.sum(V * GV, axis=0)
        hits = np.count_nonzero(L > epsilon, axis=0)
        out.extend(_estimate(int(h), n_trials, epsilon) for h in hits)
    return out


def gaussian_exceedance(quad: float, epsilon: float) -> float:
    """Exact Pr(L > epsilon) when L ~ N(quad/2, quad), quad = v^T Gamma v."""
    if quad <= 0:
        return 0.0
    s = math.sqrt(quad)
    return float(norm.sf((epsilon - quad / 2) / s))


def label_leakage(spec: LabelNoiseSpec, n_changed: int, epsilon: float, n_trials: int, rng) -> LeakageEstimate:
    """Leakage of the label release against a neighbor whose sensitive labels
    differ in ``n_changed`` places (worst case: every place)."""
    m = max(len(spec.sensitive_set), n_changed)
    base = np.zeros(m, dtype=np.int64)
    other = base.copy()
    other[:n_changed] = 1
    return estimate_leakage(LabelAnswer(base, spec), LabelAnswer(other, spec), epsilon, n_trials, rng)


def certify_centroids(diffs: np.ndarray, spec, epsilon: float, delta: float, n_trials: int, rng) -> dict:
    """Audit summary over every neighbor column: the worst empirical exceedance."""
    ests = gaussian_leakage_all(diffs, spec, epsilon, n_trials, rng)
    worst = int(np.argmax([e.prob_exceed for e in ests]))
    quad = diffs[:, worst] @ GaussianAnswer(np.zeros(diffs.shape[0]), spec).precision @ diffs[:, worst]
    e = ests[worst]
    return {
        "epsilon": epsilon,
        "delta_claimed": delta,
        "prob_exceed": e.prob_exceed,
        "stderr": e.mc_stderr,
        "n_trials": e.n_trials,
        "worst_neighbor_index": worst,
        "analytic_prob_exceed": gaussian_exceedance(float(quad), epsilon),
        "certified": all(x.certifies(delta) for x in ests),
    }
