import math

import numpy as np
import pytest

from dpmlab.errors import ConfigError, OrderingError
from dpmlab.mixture import (
    GaussianMixture,
    conditional_score,
    differential_entropy,
    kl_to_prior,
    log_density,
    marginal,
    mixture_from_spec,
    posterior_sample,
    sample_data,
    sample_marginal,
    score,
    tweedie_denoise,
)
from dpmlab.schedule import NoiseSchedule, alpha_sigma


def fd_gradient(fn, x, h=1e-4):
    """Central-difference gradient of a scalar function at point x."""
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def test_constructor_validation():
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), -np.eye(2)[None])


def test_sample_data_single_component_lln(std_gauss):
    rng = np.random.default_rng(0)
    n = 50_000
    pts, labels = sample_data(std_gauss, n, rng)
    assert np.all(labels == 0)
    assert np.linalg.norm(pts.mean(axis=0)) <= 4 * math.sqrt(2 / n)


def test_sample_data_degenerate_weight():
    mix = GaussianMixture(
        weights=np.array([1.0, 0.0]),
        means=np.array([[0.0, 0.0], [5.0, 5.0]]),
        covs=np.stack([np.eye(2)] * 2),
    )
    pts, labels = sample_data(mix, 1000, np.random.default_rng(1))
    assert np.all(labels == 0)


def test_sample_data_empirical_weights(three_comp):
    rng = np.random.default_rng(2)
    n = 100_000
    _, labels = sample_data(three_comp, n, rng)
    for i, w in enumerate(three_comp.weights):
        emp = np.mean(labels == i)
        assert abs(emp - w) <= 3 * math.sqrt(w * (1 - w) / n)


def test_score_standard_gaussian_is_minus_x(std_gauss, vp):
    # with alpha^2 + sigma^2 = 1 the marginal stays N(0, I) for every t
    for t in (0.0, 0.25, 0.7, 1.0):
        s = score(std_gauss, vp, np.array([1.0, 1.0]), t)
        assert np.allclose(s, [-1.0, -1.0], atol=1e-12)


def test_score_zero_at_symmetric_midpoint(vp):
    mix = GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.array([[1.0, 0.0], [-1.0, 0.0]]),
        covs=np.stack([0.3 * np.eye(2)] * 2),
    )
    s = score(mix, vp, np.zeros(2), 0.4)
    assert np.allclose(s, 0.0, atol=1e-14)


def test_score_matches_fd_gradient_of_log_density(two_comp, vp, ve):
    rng = np.random.default_rng(3)
    for sched in (vp, ve):
        for t in (0.05, 0.4, 0.9):
            x = rng.normal(size=2) * 1.5
            s = score(two_comp, sched, x, t)
            g = fd_gradient(lambda p: log_density(two_comp, sched, p, t), x)
            assert np.allclose(s, g, atol=1e-5)


def test_log_density_gaussian_at_mean(std_gauss, vp):
    val = log_density(std_gauss, vp, np.zeros(2), 0.5)
    assert val == pytest.approx(-math.log(2 * math.pi), rel=1e-12)


def test_log_density_integrates_to_one(two_comp, vp):
    grid = np.linspace(-8, 8, 401)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.exp(log_density(two_comp, vp, pts, 0.3)).reshape(401, 401)
    total = np.trapezoid(np.trapezoid(dens, grid, axis=1), grid)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_density_dominates_weighted_component(two_comp, vp):
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(100, 2)) * 2
    t = 0.2
    marg = marginal(two_comp, vp, t)
    dens = np.exp(log_density(two_comp, vp, pts, t))
    for i in range(two_comp.n_components):
        diff = pts - marg.means[i]
        quad = np.einsum("ni,ni->n", diff, np.linalg.solve(marg.covs[i], diff.T).T)
        comp = np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(marg.covs[i])))
        assert np.all(dens >= marg.weights[i] * comp - 1e-12)


def test_conditional_score_basics(two_comp, vp):
    a, _ = alpha_sigma(vp, 0.3)
    x_at_mean = float(a) * two_comp.means[1]
    assert np.allclose(conditional_score(two_comp, vp, x_at_mean, 0.3, 1), 0.0, atol=1e-12)
    with pytest.raises(ConfigError):
        conditional_score(two_comp, vp, np.zeros(2), 0.3, 5)


def test_conditional_score_single_component_equals_score(std_gauss, vp):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(50, 2))
    assert np.allclose(
        conditional_score(std_gauss, vp, x, 0.6, 0), score(std_gauss, vp, x, 0.6), atol=1e-12
    )


def test_conditional_score_zero_mean_law(two_comp, vp):
    # E over q_t(x | y) of the conditional score is 0 (MC check)
    rng = np.random.default_rng(6)
    n = 100_000
    t = 0.5
    a, sig = alpha_sigma(vp, t)
    for y in range(two_comp.n_components):
        chol = np.linalg.cholesky(two_comp.covs[y])
        x0 = two_comp.means[y] + rng.standard_normal((n, 2)) @ chol.T
        x_t = float(a) * x0 + float(sig) * rng.standard_normal((n, 2))
        vals = conditional_score(two_comp, vp, x_t, t, y)
        se = np.sqrt(np.sum(vals.var(axis=0, ddof=1) / n))
        assert np.linalg.norm(vals.mean(axis=0)) <= 3 * se


def test_posterior_sample_continuity(two_comp, vp):
    rng = np.random.default_rng(7)
    x_t = np.array([0.3, -0.2])
    x_s = posterior_sample(two_comp, vp, 0.5 - 1e-9, 0.5, x_t, rng)
    assert np.linalg.norm(x_s - x_t) <= 1e-3


def test_posterior_sample_ordering_error(two_comp, vp):
    with pytest.raises(OrderingError):
        posterior_sample(two_comp, vp, 0.5, 0.5, np.zeros(2), np.random.default_rng(0))


def test_posterior_chain_preserves_marginal(std_gauss, vp):
    # x_t ~ q_t then x_s | x_t must reproduce q_s = N(0, I) moments
    rng = np.random.default_rng(8)
    n = 100_000
    s, t = 0.2, 0.8
    x_t = sample_marginal(std_gauss, vp, t, n, rng)
    x_s = posterior_sample(std_gauss, vp, s, t, x_t, rng)
    assert np.linalg.norm(x_s.mean(axis=0)) <= 4 / math.sqrt(n) * 2
    cov = np.cov(x_s.T)
    assert np.allclose(cov, np.eye(2), atol=4 * math.sqrt(2 / n) * 2)


def test_posterior_martingale_mc(two_comp, vp):
    # E[alpha_s score(x_s, s) | x_t] = alpha_t score(x_t, t), via nested MC
    rng = np.random.default_rng(9)
    s, t = 0.3, 0.7
    a_s, _ = alpha_sigma(vp, s)
    a_t, _ = alpha_sigma(vp, t)
    x_t = sample_marginal(two_comp, vp, t, 5, rng)
    n_inner = 200_000
    for j in range(x_t.shape[0]):
        rep = np.repeat(x_t[j][None], n_inner, axis=0)
        x_s = posterior_sample(two_comp, vp, s, t, rep, rng)
        vals = float(a_s) * score(two_comp, vp, x_s, s)
        target = float(a_t) * score(two_comp, vp, x_t[j], t)
        se = np.sqrt(np.sum(vals.var(axis=0, ddof=1) / n_inner))
        assert np.linalg.norm(vals.mean(axis=0) - target) <= 4 * se


def test_tweedie_standard_gaussian(std_gauss, vp):
    # posterior mean is alpha x / (alpha^2 + sigma^2) = alpha x on VP
    t = 0.62
    a, _ = alpha_sigma(vp, t)
    x = np.array([2.0, 0.0])
    assert np.allclose(tweedie_denoise(std_gauss, vp, x, t), float(a) * x, atol=1e-12)


def test_tweedie_small_t_is_identity(two_comp, vp):
    x = np.array([0.7, -1.1])
    out = tweedie_denoise(two_comp, vp, x, 1e-7)
    assert np.allclose(out, x, atol=1e-6)


def test_tweedie_paths_agree(two_comp, vp, ve):
    rng = np.random.default_rng(10)
    x = rng.normal(size=(40, 2)) * 2
    for sched in (vp, ve):
        for t in (0.1, 0.5, 1.0):
            via_score = tweedie_denoise(two_comp, sched, x, t, via="score")
            via_post = tweedie_denoise(two_comp, sched, x, t, via="posterior")
            assert np.allclose(via_score, via_post, rtol=1e-9, atol=1e-9)


def test_kl_to_prior_matched(std_gauss, vp):
    est = kl_to_prior(std_gauss, vp, 50_000, np.random.default_rng(11))
    assert abs(est.value) <= max(3 * est.se, 1e-9)


def test_kl_to_prior_mismatch_positive():
    mix = GaussianMixture(
        weights=np.array([1.0]), means=np.array([[6.0, 6.0]]), covs=0.2 * np.eye(2)[None]
    )
    sched = NoiseSchedule(kind="vp-linear", T=0.1)
    est = kl_to_prior(mix, sched, 20_000, np.random.default_rng(12))
    assert est.value > 10


def test_kl_to_prior_matches_grid_quadrature(two_comp, vp):
    est = kl_to_prior(two_comp, vp, 400_000, np.random.default_rng(13))
    grid = np.linspace(-8, 8, 801)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    log_q = log_density(two_comp, vp, pts, vp.T)
    std = vp.prior_std
    log_p = -0.5 * np.sum((pts / std) ** 2, axis=1) - math.log(2 * math.pi * std**2)
    integrand = (np.exp(log_q) * (log_q - log_p)).reshape(801, 801)
    quad = np.trapezoid(np.trapezoid(integrand, grid, axis=1), grid)
    assert est.value == pytest.approx(quad, abs=max(1e-3, 4 * est.se))


def test_zero_mean_score_law(three_comp, vp, ve):
    rng = np.random.default_rng(14)
    n = 100_000
    for sched in (vp, ve):
        for t in (0.05, 0.5, 1.0):
            x_t = sample_marginal(three_comp, sched, t, n, rng)
            vals = score(three_comp, sched, x_t, t)
            se = np.sqrt(np.sum(vals.var(axis=0, ddof=1) / n))
            assert np.linalg.norm(vals.mean(axis=0)) <= 3 * se


def test_score_jacobian_symmetry(two_comp, vp):
    # scores are true gradients, so their Jacobian is symmetric
    rng = np.random.default_rng(15)
    h = 1e-4
    for _ in range(5):
        x = rng.normal(size=2) * 1.5
        t = rng.uniform(0.1, 1.0)
        jac = np.zeros((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            jac[:, j] = (score(two_comp, vp, x + e, t) - score(two_comp, vp, x - e, t)) / (2 * h)
        assert np.max(np.abs(jac - jac.T)) <= 1e-4


def test_mixture_from_spec_flat_and_nested():
    spec = [
        {"weight": 0.5, "mean": [0.0, 0.0], "cov": [1.0, 0.0, 0.0, 1.0]},
        {"weight": 0.5, "mean": [1.0, 1.0], "cov": [[0.5, 0.1], [0.1, 0.5]]},
    ]
    mix = mixture_from_spec(2, spec)
    assert mix.covs[0].tolist() == np.eye(2).tolist()
    with pytest.raises(ConfigError):
        mixture_from_spec(2, [{"weight": 1.0, "mean": [0.0], "cov": [1.0]}])


def test_differential_entropy_gaussian(std_gauss):
    est = differential_entropy(std_gauss, 200_000, np.random.default_rng(16))
    exact = math.log(2 * math.pi * math.e)  # k/2 log(2 pi e) with k=2, unit cov
    assert est.value == pytest.approx(exact, abs=4 * est.se)
