"""Exact Gaussian-mixture data distribution and its diffusion oracle.

A mixture q_0 = sum_i w_i N(mu_i, Sigma_i) has closed-form marginals under
the forward process: q_t = sum_i w_i N(alpha_t mu_i, alpha_t^2 Sigma_i +
sigma_t^2 I).  That gives exact scores, densities, Tweedie posterior means,
and exact ancestral draws from the reverse conditional q(x_s | x_t), which
together act as the brute-force oracle behind every verifier in the package.

All responsibilities are computed in log space (components become nearly
singular as t -> 0).  Operations are pure given an explicit rng and accept a
single point (k,) or a batch (n, k).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OrderingError
from .schedule import NoiseSchedule, alpha_sigma, transition
from .util import MeanSE, logsumexp

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of full-covariance Gaussians; component index doubles as the
    conditional context label y."""

    weights: np.ndarray  # (m,)
    means: np.ndarray    # (m, k)
    covs: np.ndarray     # (m, k, k)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covs, dtype=float)
        if mu.ndim != 2:
            raise ConfigError("means must have shape (m, k)")
        m, k = mu.shape
        if w.shape != (m,) or cov.shape != (m, k, k):
            raise ConfigError("weights/means/covs have inconsistent shapes")
        # zero weights are tolerated (degenerate components are simply never
        # drawn); negative weights are not
        if np.any(w < 0) or not np.any(w > 0):
            raise ConfigError("component weights must be nonnegative with a positive total")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError("every component covariance must be positive definite") from None
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def mean(self) -> np.ndarray:
        """E[x_0]."""
        return self.weights @ self.means


@dataclass(frozen=True)
class MarginalMixture:
    """Per-component parameters of q_t: weights unchanged, means alpha_t mu_i,
    covariances alpha_t^2 Sigma_i + sigma_t^2 I."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    chols: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "chols", np.linalg.cholesky(self.covs))


def marginal(mix: GaussianMixture, schedule: NoiseSchedule, t: float) -> MarginalMixture:
    a, s = alpha_sigma(schedule, t)
    eye = np.eye(mix.dim)
    return MarginalMixture(
        weights=mix.weights,
        means=float(a) * mix.means,
        covs=float(a) ** 2 * mix.covs + float(s) ** 2 * eye,
    )


def _solve_chol(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L L^T) z = rhs for a batch of row vectors rhs (n, k)."""
    y = np.linalg.solve(chol, rhs.T)
    return np.linalg.solve(chol.T, y).T


def _component_stats(marg: MarginalMixture, x: np.ndarray):
    """Per-component log densities and precision-solved residuals.

    Returns (log_joint (n, m), solved (m, n, k)) with
    log_joint_i = log w_i + log N(x | mean_i, cov_i) and
    solved_i = cov_i^{-1} (x - mean_i).
    """
    n = x.shape[0]
    m, k = marg.means.shape
    log_joint = np.empty((n, m))
    solved = np.empty((m, n, k))
    for i in range(m):
        diff = x - marg.means[i]
        white = np.linalg.solve(marg.chols[i], diff.T).T           # L^{-1} diff
        solved[i] = np.linalg.solve(marg.chols[i].T, white.T).T    # Sigma^{-1} diff
        log_det_half = float(np.sum(np.log(np.diag(marg.chols[i]))))
        with np.errstate(divide="ignore"):
            log_w = np.log(marg.weights[i])
        log_joint[:, i] = (
            log_w - 0.5 * np.sum(white**2, axis=1) - log_det_half - 0.5 * k * _LOG_2PI
        )
    return log_joint, solved


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def log_density(mix: GaussianMixture, schedule: NoiseSchedule, x, t: float):
    """log q_t(x), stabilized via log-sum-exp."""
    xb, single = _as_batch(x)
    log_joint, _ = _component_stats(marginal(mix, schedule, t), xb)
    out = logsumexp(log_joint, axis=1)
    return float(out[0]) if single else out


def score(mix: GaussianMixture, schedule: NoiseSchedule, x, t: float):
    """Data score grad_x log q_t(x).

    Responsibility-weighted component scores: sum_i gamma_i(x) *
    (-(alpha^2 Sigma_i + sigma^2 I)^{-1} (x - alpha mu_i)).
    """
    xb, single = _as_batch(x)
    log_joint, solved = _component_stats(marginal(mix, schedule, t), xb)
    log_gamma = log_joint - logsumexp(log_joint, axis=1)[:, None]
    gamma = np.exp(log_gamma)
    out = -np.einsum("nm,mnk->nk", gamma, solved)
    return out[0] if single else out


def conditional_score(mix: GaussianMixture, schedule: NoiseSchedule, x, t: float, y: int):
    """Score of the single component y's marginal, grad_x log q_t(x | y)."""
    if not 0 <= int(y) < mix.n_components:
        raise ConfigError(f"label {y} not a valid component index")
    xb, single = _as_batch(x)
    marg = marginal(mix, schedule, t)
    diff = xb - marg.means[int(y)]
    out = -_solve_chol(marg.chols[int(y)], diff)
    return out[0] if single else out


def sample_data(mix: GaussianMixture, n: int, rng: np.random.Generator):
    """n i.i.d. draws from q_0 with their component labels."""
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    labels = rng.choice(mix.n_components, size=n, p=mix.weights)
    z = rng.standard_normal((n, mix.dim))
    chols = np.linalg.cholesky(mix.covs)
    points = mix.means[labels] + np.einsum("nij,nj->ni", chols[labels], z)
    return points, labels


def sample_marginal(mix: GaussianMixture, schedule: NoiseSchedule, t: float, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Exact draws from q_t via x_t = alpha_t x_0 + sigma_t eps."""
    x0, _ = sample_data(mix, n, rng)
    a, s = alpha_sigma(schedule, t)
    return float(a) * x0 + float(s) * rng.standard_normal((n, mix.dim))


def posterior_sample(mix: GaussianMixture, schedule: NoiseSchedule, s: float, t: float,
                     x_t, rng: np.random.Generator):
    """Exact ancestral draw from q(x_s | x_t) for 0 <= s < t <= T.

    Choose a component by its posterior responsibility at x_t, then draw the
    Gaussian conditional of (x_s | x_t, component): the joint per component
    is Gaussian with cross-covariance alpha_{t|s} (alpha_s^2 Sigma_i +
    sigma_s^2 I).
    """
    if s >= t:
        raise OrderingError(f"posterior_sample requires s < t, got s={s}, t={t}")
    xb, single = _as_batch(x_t)
    n = xb.shape[0]
    k = mix.dim
    marg_s = marginal(mix, schedule, s)
    marg_t = marginal(mix, schedule, t)
    coeff = transition(schedule, s, t)
    c = coeff.alpha_ts

    log_joint, solved_t = _component_stats(marg_t, xb)
    log_gamma = log_joint - logsumexp(log_joint, axis=1)[:, None]
    gamma = np.exp(log_gamma)
    gamma /= gamma.sum(axis=1, keepdims=True)
    u = rng.random(n)
    comp = (u[:, None] >= np.cumsum(gamma, axis=1)).sum(axis=1)
    comp = np.minimum(comp, mix.n_components - 1)
    z = rng.standard_normal((n, k))

    out = np.empty((n, k))
    for i in range(mix.n_components):
        idx = np.flatnonzero(comp == i)
        if idx.size == 0:
            continue
        a_i = marg_s.covs[i]
        # cond cov = A - c^2 A B^{-1} A = sigma2_{t|s} A B^{-1}, symmetrized
        cond_cov = a_i - c**2 * (a_i @ _solve_chol(marg_t.chols[i], a_i))
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        chol = np.linalg.cholesky(cond_cov)
        cond_mean = marg_s.means[i] + c * (solved_t[i][idx] @ a_i)
        out[idx] = cond_mean + z[idx] @ chol.T
    return out[0] if single else out


def tweedie_denoise(mix: GaussianMixture, schedule: NoiseSchedule, x, t: float,
                    via: str = "score"):
    """Posterior mean E[x_0 | x_t].

    ``via='score'`` uses (x + sigma_t^2 grad log q_t(x)) / alpha_t;
    ``via='posterior'`` averages per-component Gaussian posterior means with
    the responsibilities.  Both paths agree to FP accuracy.
    """
    xb, single = _as_batch(x)
    a, sig = alpha_sigma(schedule, t)
    a, sig = float(a), float(sig)
    if via == "score":
        out = (xb + sig**2 * score(mix, schedule, xb, t)) / a
    elif via == "posterior":
        marg_t = marginal(mix, schedule, t)
        log_joint, solved_t = _component_stats(marg_t, xb)
        log_gamma = log_joint - logsumexp(log_joint, axis=1)[:, None]
        gamma = np.exp(log_gamma)
        # E[x_0 | x_t, i] = mu_i + alpha Sigma_i B_i^{-1} (x - alpha mu_i)
        post_means = mix.means[:, None, :] + a * np.einsum(
            "mij,mnj->mni", mix.covs, solved_t
        )
        out = np.einsum("nm,mnk->nk", gamma, post_means)
    else:
        raise ConfigError(f"unknown tweedie path {via!r}")
    return out[0] if single else out


def kl_to_prior(mix: GaussianMixture, schedule: NoiseSchedule, n: int,
                rng: np.random.Generator) -> MeanSE:
    """MC estimate of D_KL(q_T || p_T) with p_T = N(0, prior_std^2 I)."""
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    x = sample_marginal(mix, schedule, schedule.T, n, rng)
    log_q = log_density(mix, schedule, x, schedule.T)
    std = schedule.prior_std
    log_p = -0.5 * np.sum((x / std) ** 2, axis=1) - mix.dim * (0.5 * _LOG_2PI + np.log(std))
    diffs = log_q - log_p
    return MeanSE(float(diffs.mean()), float(diffs.std(ddof=1) / np.sqrt(n)))


def differential_entropy(mix: GaussianMixture, n: int, rng: np.random.Generator) -> MeanSE:
    """MC estimate of H(q_0) = E[-log q_0(x_0)]."""
    x0, _ = sample_data(mix, n, rng)
    marg0 = MarginalMixture(weights=mix.weights, means=mix.means, covs=mix.covs)
    log_joint, _ = _component_stats(marg0, x0)
    vals = -logsumexp(log_joint, axis=1)
    return MeanSE(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n)))


def mixture_from_spec(dim: int, components) -> GaussianMixture:
    """Build a mixture from (weight, mean, covariance) triples.

    Covariances may be nested k x k rows or a flat row-major list of k^2
    entries, matching the config-file format.
    """
    weights, means, covs = [], [], []
    for comp in components:
        weights.append(float(comp["weight"]))
        mean = np.asarray(comp["mean"], dtype=float)
        if mean.shape != (dim,):
            raise ConfigError(f"component mean {mean} does not have dim {dim}")
        cov = np.asarray(comp["cov"], dtype=float)
        if cov.ndim == 1:
            if cov.size != dim * dim:
                raise ConfigError("flat covariance must have k*k entries")
            cov = cov.reshape(dim, dim)
        if cov.shape != (dim, dim):
            raise ConfigError("covariance must be k x k")
        means.append(mean)
        covs.append(cov)
    return GaussianMixture(
        weights=np.asarray(weights), means=np.asarray(means), covs=np.asarray(covs)
    )
