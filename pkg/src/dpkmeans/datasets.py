"""Synthetic datasets: a Gaussian mixture and a stand-in for daily AMI profiles."""

from __future__ import annotations

import numpy as np

from .core import Dataset, Rng


def mixture_means(k: int, d: int, spread: float, seed: int, min_sep: float | None = None) -> np.ndarray:
    """k means drawn uniformly in [-spread, spread]^d, rejecting any closer
    than ``min_sep`` (default spread / 2) to an accepted one."""
    gen = Rng(seed).split("mixture-means").generator
    min_sep = spread / 2 if min_sep is None else min_sep
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < k:
        c = gen.uniform(-spread, spread, d)
        tries += 1
        if all(np.linalg.norm(c - m) >= min_sep for m in means):
            means.append(c)
        if tries > 100_000:
            raise ValueError("could not place well-separated means; increase spread")
    return np.array(means)


def gaussian_mixture(n: int, k: int = 6, d: int = 2, spread: float = 5.0, seed: int = 0, std: float = 1.0, min_sep: float | None = 3.0):
    """n draws from k equally likely N(mu_j, std^2 I) components.

    Returns (points, component labels, means); points is n x d.
    """
    means = mixture_means(k, d, spread, seed, min_sep)
    gen = Rng(seed).split("mixture-points").generator
    comp = gen.integers(0, k, size=n)
    X = means[comp] + std * gen.standard_normal((n, d))
    return X, comp, means


def _bump(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def ami_standin(seed: int = 0, n_houses: int = 1409, n_outliers: int = 7, d: int = 25) -> Dataset:
    """Synthetic daily load profiles (kW, hourly, midnight to midnight inclusive).

    Six residential archetypes with log-normal, hour-correlated variation, one
    of them with rooftop PV (negative midday net load), plus ``n_outliers``
    commercial-scale profiles. Default size matches 1416 = 1409 + 7.
    """
    gen = Rng(seed).split("ami-standin").generator
    t = np.linspace(0, 24, d)
    shapes = np.array([
        0.35 + 0.6 * _bump(t, 7, 1.2) + 1.2 * _bump(t, 19, 2.0),  # commuter
        0.5 + 0.4 * _bump(t, 13, 4.0) + 0.8 * _bump(t, 20, 2.5),  # at home all day
        0.9 + 0.15 * np.cos(2 * np.pi * t / 24),  # flat, electric heating
        0.25 + 0.3 * _bump(t, 8, 1.5) + 2.2 * _bump(t, 21, 1.5),  # late evening peak
        0.3 + 0.2 * _bump(t, 7, 1.0) + 0.5 * _bump(t, 18, 2.0),  # small apartment
        0.6 + 0.5 * _bump(t, 7, 1.5) + 1.5 * _bump(t, 19, 2.0),  # PV household (consumption)
    ])
    weights = np.array([0.26, 0.2, 0.12, 0.12, 0.2, 0.1])
    arch = gen.choice(len(shapes), size=n_houses, p=weights)
    # AR(1) across hours for the multiplicative log-noise
    phi, s = 0.8, 0.25
    e = np.empty((n_houses, d))
    e[:, 0] = gen.standard_normal(n_houses) * s
    for j in range(1, d):
        e[:, j] = phi * e[:, j - 1] + np.sqrt(1 - phi**2) * s * gen.standard_normal(n_houses)
    level = np.exp(0.3 * gen.standard_normal(n_houses))
    X = shapes[arch] * level[:, None] * np.exp(e)
    pv = arch == 5
    pv_size = gen.uniform(2.0, 4.0, size=pv.sum())
    X[pv] -= pv_size[:, None] * _bump(t, 12.5, 2.5)[None, :]

    hours = (t >= 8) & (t <= 18)
    out = np.empty((n_outliers, d))
    for i in range(n_outliers):
        peak = gen.uniform(25, 45)
        out[i] = 4 + peak * (0.15 + 0.85 * hours) * np.exp(0.05 * gen.standard_normal(d))
    points = np.vstack([X, out])
    order = gen.permutation(points.shape[0])
    ids = [f"house{i:04d}" for i in range(n_houses)] + [f"commercial{i}" for i in range(n_outliers)]
    return Dataset(points[order], tuple(ids[i] for i in order))
