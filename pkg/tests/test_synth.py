import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpkmeans.core import ClusteringResult, Dataset, PrivacyBudget, Rng
from dpkmeans.datasets import ami_standin
from dpkmeans.synth import (
    LogNormalClusterModel,
    SynthBudgets,
    allocate_counts,
    default_alpha,
    fit_cluster,
    generate_all,
    sample_profiles,
    wishart_noise,
    write_samples_csv,
)

MU0 = np.array([0.5, 1.0, 1.5, 0.8])
A = np.array([[1.0, 0.3, 0.0, 0.1], [0.0, 0.8, 0.2, 0.0], [0.0, 0.0, 0.6, 0.3], [0.0, 0.0, 0.0, 0.5]])
SIG0 = 0.2 * A @ A.T
ALPHA = 2.0


def lognormal_data(n, seed):
    g = np.random.default_rng(seed)
    Y = g.multivariate_normal(MU0, SIG0, size=n)
    return Dataset(np.exp(Y) - ALPHA)


def test_noiseless_fit_recovers_truth():
    n = 10_000
    m = fit_cluster(lognormal_data(n, 0), np.zeros(n, int), 0, ALPHA, None, None, Rng(0))
    se_mu = np.sqrt(np.diag(SIG0) / n)
    assert np.all(np.abs(m.mu - MU0) <= 3 * se_mu)
    d = np.sqrt(np.diag(SIG0))
    se_cov = np.sqrt((np.outer(d**2, d**2) + SIG0**2) / n)
    assert np.all(np.abs(m.sigma_mat - SIG0) <= 3 * se_cov)
    assert not m.diagonal_only


def test_sample_roundtrip_moments():
    n = 100_000
    model = LogNormalClusterModel(MU0, SIG0, ALPHA, 50)
    Y = np.log(sample_profiles(model, n, Rng(1)) + ALPHA)
    assert np.all(np.abs(Y.mean(0) - MU0) <= 3 * np.sqrt(np.diag(SIG0) / n))
    d = np.sqrt(np.diag(SIG0))
    se = np.sqrt((np.outer(d**2, d**2) + SIG0**2) / n)
    assert np.all(np.abs(np.cov(Y.T) - SIG0) <= 3 * se)


def test_degenerate_covariance_sample():
    model = LogNormalClusterModel(MU0, np.zeros((4, 4)), ALPHA, 5)
    out = sample_profiles(model, 7, Rng(0))
    np.testing.assert_array_equal(out, np.tile(np.exp(MU0) - ALPHA, (7, 1)))


def test_sample_rejects_non_psd():
    model = LogNormalClusterModel(MU0, -np.eye(4), ALPHA, 5)
    with pytest.raises(ValueError):
        sample_profiles(model, 3, Rng(0))


def test_log_error_names_cell_and_alpha():
    ds = Dataset(np.array([[1.0, 2.0], [0.5, -3.0], [1.0, 1.0]]), ("a", "b", "c"))
    with pytest.raises(ValueError, match=r"row b, column 1.*alpha must exceed 3"):
        fit_cluster(ds, [0, 0, 0], 0, 2.0, None, None, Rng(0))


def test_default_alpha():
    assert default_alpha(np.array([[-2.3, 4.0]])) == 4.0
    assert default_alpha(np.array([[5.0]])) == 1.0
    X = np.array([[-2.0, 3.0], [1.0, -0.5]])
    assert np.all(X + default_alpha(X) >= 1)


def test_ami_alpha_15_positive():
    ds = ami_standin(seed=0)
    assert np.all(ds.points + 15 > 0)


def test_small_clusters():
    ds = lognormal_data(10, 3)
    with pytest.raises(ValueError, match="single member"):
        fit_cluster(ds, [0] + [1] * 9, 0, ALPHA, None, None, Rng(0))
    with pytest.raises(ValueError, match="empty"):
        fit_cluster(ds, [1] * 10, 0, ALPHA, None, None, Rng(0))
    with pytest.warns(UserWarning, match="diagonal"):
        m = fit_cluster(ds, [0] * 3 + [1] * 7, 0, ALPHA, None, None, Rng(0))
    assert m.diagonal_only
    np.testing.assert_array_equal(m.sigma_mat, np.diag(np.diag(m.sigma_mat)))


def test_wishart_noise_mean():
    from scipy.stats import wishart

    d, scale, df, n = 3, 0.7, 4, 20_000
    draws = np.array([wishart_noise(d, scale, df, Rng(0).split(str(i))) for i in range(n)])
    oracle = wishart(df=df, scale=scale * np.eye(d))
    se = np.sqrt(oracle.var() / n)
    assert np.all(np.abs(draws.mean(0) - oracle.mean()) <= 4 * se)


def test_noisy_fit_is_psd_and_logged():
    ds = lognormal_data(200, 4)
    m = fit_cluster(ds, np.zeros(200, int), 0, ALPHA, PrivacyBudget(1, 0.1), PrivacyBudget(1), Rng(0))
    assert np.linalg.eigvalsh(m.sigma_mat).min() >= -1e-12
    np.testing.assert_array_equal(m.sigma_mat, m.sigma_mat.T)
    meta = m.to_dict()
    assert meta["wishart_df"] == 5 and meta["wishart_const"] == 1.5
    assert meta["mean_sigma"] > 0


@given(st.integers(0, 500), st.lists(st.integers(0, 100), min_size=1, max_size=8))
def test_allocate_counts(total, pops):
    c = allocate_counts(total, pops)
    if sum(pops) == 0:
        assert c == [0] * len(pops)
        return
    assert sum(c) == total
    exact = total * np.array(pops) / sum(pops)
    assert np.all(np.abs(np.array(c) - exact) < 1)


def _two_clusters():
    a, b = lognormal_data(60, 5), lognormal_data(40, 6)
    ds = Dataset(np.vstack([a.points, b.points + 0.5]))
    return ds, ClusteringResult(np.zeros((2, 4)), [0] * 60 + [1] * 40)


def test_generate_all_zero_counts_still_charged(tmp_path):
    ds, cl = _two_clusters()
    budgets = SynthBudgets(PrivacyBudget(1, 0.1), PrivacyBudget(2), (PrivacyBudget(3, 0.05),))
    out = generate_all(ds, cl, [0, 0], ALPHA, budgets, Rng(0))
    assert out.samples.shape == (0, 4)
    assert out.budget == PrivacyBudget(3 + 2 * 1 + 2 * 2, 0.05 + 2 * 0.1)
    write_samples_csv(tmp_path / "s.csv", out, 4)
    assert (tmp_path / "s.csv").read_text() == "cluster,sample_id,t0,t1,t2,t3\n"


def test_generate_all_deterministic():
    ds, cl = _two_clusters()
    budgets = SynthBudgets(PrivacyBudget(1, 0.1), PrivacyBudget(1))
    a = generate_all(ds, cl, [5, 3], ALPHA, budgets, Rng(9))
    b = generate_all(ds, cl, [5, 3], ALPHA, budgets, Rng(9))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.clusters, [0] * 5 + [1] * 3)
    with pytest.raises(ValueError):
        generate_all(ds, cl, [1], ALPHA, budgets, Rng(9))
