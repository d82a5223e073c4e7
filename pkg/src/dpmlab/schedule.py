"""Noise schedules (alpha_t, sigma_t) and derived forward-process quantities.

Two schedule families are supported on t in [0, T]:

* ``vp-linear``:  log alpha_t = -t^2 (beta_max - beta_min)/4 - t beta_min/2,
  sigma_t = sqrt(1 - alpha_t^2), so alpha_t^2 + sigma_t^2 = 1.
* ``ve-geometric``: alpha_t = 1, sigma_t = sigma_min (sigma_max/sigma_min)^t.

Derived quantities: the SDE drift f(t) = d log alpha_t / dt, the squared
diffusion g(t)^2 = d sigma_t^2/dt - 2 f(t) sigma_t^2, the two-timestep
transition coefficients alpha_{t|s} = alpha_t/alpha_s and
sigma_{t|s}^2 = sigma_t^2 - alpha_{t|s}^2 sigma_s^2, and the logSNR
lambda_t = log(alpha_t/sigma_t) with its inverse.

Schedules are frozen dataclasses; all functions are pure, accept scalar or
array t, and are safe for concurrent reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, OrderingError

VP_LINEAR = "vp-linear"
VE_GEOMETRIC = "ve-geometric"

# Smallest time at which noise-parametrized operations are evaluated; for the
# VP family sigma_0 = 0 makes those singular at t = 0.
T_MIN = 1e-5


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process schedule.

    ``prior_std`` is the standard deviation of the terminal prior
    p_T = N(0, prior_std^2 I): 1 for VP, sigma_max for VE.
    """

    kind: str
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in (VP_LINEAR, VE_GEOMETRIC):
            raise ConfigError(f"unknown schedule kind: {self.kind!r}")
        if self.T <= 0:
            raise ConfigError("schedule horizon T must be positive")
        if self.kind == VP_LINEAR and not 0 < self.beta_min <= self.beta_max:
            raise ConfigError("vp-linear requires 0 < beta_min <= beta_max")
        if self.kind == VE_GEOMETRIC and not 0 < self.sigma_min <= self.sigma_max:
            raise ConfigError("ve-geometric requires 0 < sigma_min <= sigma_max")

    @property
    def prior_std(self) -> float:
        return 1.0 if self.kind == VP_LINEAR else self.sigma_max


@dataclass(frozen=True)
class TransitionCoeffs:
    """Coefficients of q(x_t | x_s) = N(alpha_ts x_s, sigma2_ts I)."""

    alpha_ts: float
    sigma2_ts: float


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing sampling grid t_0 = T > t_1 > ... > t_N = t_end."""

    times: np.ndarray
    spacing: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("time grid needs at least two entries")
        if not np.all(np.diff(t) < 0):
            raise ConfigError("time grid must be strictly decreasing")
        if t[-1] <= 0:
            raise ConfigError("time grid end must be positive")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


def _check_time(schedule: NoiseSchedule, t, lo: float = 0.0) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < lo - 1e-12) or np.any(t > schedule.T + 1e-12):
        raise DomainError(f"time {t} outside [{lo}, {schedule.T}]")
    return t


def log_alpha(schedule: NoiseSchedule, t):
    t = _check_time(schedule, t)
    if schedule.kind == VP_LINEAR:
        return -0.25 * t**2 * (schedule.beta_max - schedule.beta_min) - 0.5 * t * schedule.beta_min
    return np.zeros_like(t)


def alpha_sigma(schedule: NoiseSchedule, t):
    """Closed-form (alpha_t, sigma_t) of the perturbation kernel."""
    t = _check_time(schedule, t)
    if schedule.kind == VP_LINEAR:
        a = np.exp(log_alpha(schedule, t))
        s = np.sqrt(np.maximum(0.0, 1.0 - a**2))
        return a, s
    a = np.ones_like(t)
    s = schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** t
    return a, s


def drift_diffusion(schedule: NoiseSchedule, t):
    """SDE drift coefficient f(t) and squared diffusion g(t)^2."""
    t = _check_time(schedule, t)
    if schedule.kind == VP_LINEAR:
        beta = schedule.beta_min + t * (schedule.beta_max - schedule.beta_min)
        return -0.5 * beta, beta
    _, s = alpha_sigma(schedule, t)
    log_ratio = math.log(schedule.sigma_max / schedule.sigma_min)
    return np.zeros_like(t), 2.0 * s**2 * log_ratio


def transition(schedule: NoiseSchedule, s: float, t: float) -> TransitionCoeffs:
    """Two-timestep transition coefficients for 0 <= s <= t <= T."""
    s = float(_check_time(schedule, s))
    t = float(_check_time(schedule, t))
    if s > t:
        raise OrderingError(f"transition requires s <= t, got s={s}, t={t}")
    a_s, sig_s = alpha_sigma(schedule, s)
    a_t, sig_t = alpha_sigma(schedule, t)
    alpha_ts = float(a_t / a_s)
    sigma2_ts = float(sig_t**2 - alpha_ts**2 * sig_s**2)
    return TransitionCoeffs(alpha_ts=alpha_ts, sigma2_ts=max(sigma2_ts, 0.0))


def log_snr(schedule: NoiseSchedule, t):
    """lambda_t = log(alpha_t / sigma_t)."""
    a, s = alpha_sigma(schedule, t)
    return np.log(a) - np.log(s)


def time_of_log_snr(schedule: NoiseSchedule, lam):
    """Inverse of :func:`log_snr` (lambda is strictly decreasing in t)."""
    lam = np.asarray(lam, dtype=float)
    if schedule.kind == VP_LINEAR:
        # -2 log alpha = log(1 + e^(-2 lambda)); solve the quadratic in t.
        big_l = np.logaddexp(0.0, -2.0 * lam)
        b_d = schedule.beta_max - schedule.beta_min
        if b_d == 0.0:
            t = big_l / schedule.beta_min
        else:
            tmp = 2.0 * b_d * big_l
            t = tmp / (np.sqrt(schedule.beta_min**2 + tmp) + schedule.beta_min) / b_d
    else:
        log_ratio = math.log(schedule.sigma_max / schedule.sigma_min)
        t = (-lam - math.log(schedule.sigma_min)) / log_ratio
    return np.clip(t, 0.0, schedule.T)


def end_time_rule(nfe: int) -> float:
    """Sampler end time: 1e-3 below 15 evaluations, 1e-4 otherwise."""
    return 1e-3 if nfe < 15 else 1e-4


def make_time_grid(
    schedule: NoiseSchedule,
    nfe: int,
    spacing: str = "uniform-t",
    t_end: float | None = None,
) -> TimeGrid:
    """Decreasing grid of ``nfe`` steps from T down to the end time.

    ``t_end`` defaults to :func:`end_time_rule` applied to ``nfe``.
    ``uniform-logSNR`` spaces nodes equally in lambda = log(alpha/sigma).
    """
    if nfe < 1:
        raise ConfigError(f"nfe must be >= 1, got {nfe}")
    if t_end is None:
        t_end = end_time_rule(nfe)
    if not 0 < t_end < schedule.T:
        raise ConfigError(f"end time {t_end} must lie in (0, T)")
    if spacing == "uniform-t":
        times = np.linspace(schedule.T, t_end, nfe + 1)
    elif spacing == "uniform-logSNR":
        lams = np.linspace(
            float(log_snr(schedule, schedule.T)), float(log_snr(schedule, t_end)), nfe + 1
        )
        times = time_of_log_snr(schedule, lams)
        # pin the endpoints; the inverse is exact only up to FP
        times[0], times[-1] = schedule.T, t_end
    else:
        raise ConfigError(f"unknown grid spacing: {spacing!r}")
    return TimeGrid(times=times, spacing=spacing)


def discrete_time_grid(schedule: NoiseSchedule, n: int = 1000) -> np.ndarray:
    """Uniform (n+1)-point grid representing a discrete-time schedule."""
    return np.linspace(0.0, schedule.T, n + 1)


_FLOAT_FIELDS = {
    VP_LINEAR: ("beta_min", "beta_max", "T"),
    VE_GEOMETRIC: ("sigma_min", "sigma_max", "T"),
}


def schedule_to_text(schedule: NoiseSchedule) -> str:
    """One-line text block (kind + params); decimal round-trip exact."""
    parts = [f"kind={schedule.kind}"]
    for name in _FLOAT_FIELDS[schedule.kind]:
        parts.append(f"{name}={format(getattr(schedule, name), '.17g')}")
    parts.append(f"prior_std={format(schedule.prior_std, '.17g')}")
    return " ".join(parts)


def schedule_from_text(text: str) -> NoiseSchedule:
    fields = {}
    for token in text.split():
        if "=" not in token:
            raise ConfigError(f"malformed schedule token: {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    try:
        kind = fields.pop("kind")
    except KeyError:
        raise ConfigError("schedule text missing 'kind'") from None
    if kind not in _FLOAT_FIELDS:
        raise ConfigError(f"unknown schedule kind: {kind!r}")
    expected = set(_FLOAT_FIELDS[kind]) | {"prior_std"}
    if set(fields) != expected:
        raise ConfigError(f"schedule text fields {sorted(fields)} != expected {sorted(expected)}")
    prior = float(fields.pop("prior_std"))
    sched = NoiseSchedule(kind=kind, **{k: float(v) for k, v in fields.items()})
    if prior != sched.prior_std:
        raise ConfigError(f"inconsistent prior_std {prior} for {kind}")
    return sched
