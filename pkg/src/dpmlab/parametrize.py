"""Algebra of the four model parametrizations: score, noise, data, velocity.

At a state x and time t the parametrizations are linked pointwise by

    s = -eps / sigma_t
    x_hat = (x - sigma_t eps) / alpha_t
    v = alpha_t eps - sigma_t x_hat

so every pairwise conversion is affine in the model output with an
x-dependent offset.  Calibration terms (input-independent shifts of the
output) transform through the linear part only.  Each parametrization has
its own optimal calibration term and quadratic objective-reduction formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularTimeError
from .schedule import T_MIN, NoiseSchedule, alpha_sigma

PARAMETRIZATIONS = ("score", "noise", "data", "velocity")


@dataclass(frozen=True)
class CalibrationTerm:
    """A per-timestep output shift, tagged with the parametrization under
    which it was estimated and optionally a conditional label."""

    t: float
    value: np.ndarray
    parametrization: str
    label: int | None = None

    def __post_init__(self):
        if self.parametrization not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {self.parametrization!r}")
        v = np.asarray(self.value, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ConfigError("calibration term entries must be finite")
        object.__setattr__(self, "value", v)


def _coeffs(schedule: NoiseSchedule, t: float) -> tuple[float, float]:
    a, s = alpha_sigma(schedule, t)
    a, s = float(a), float(s)
    if s == 0.0:
        raise SingularTimeError(f"sigma_t = 0 at t={t}; conversions are singular")
    return a, s


def convert(out, from_param: str, to_param: str, x, t: float,
            schedule: NoiseSchedule):
    """Convert a model output between parametrizations at state x, time t."""
    for p in (from_param, to_param):
        if p not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {p!r}")
    out = np.asarray(out, dtype=float)
    if from_param == to_param:
        return out
    x = np.asarray(x, dtype=float)
    a, s = _coeffs(schedule, t)

    # route through noise prediction
    if from_param == "noise":
        eps = out
    elif from_param == "score":
        eps = -s * out
    elif from_param == "data":
        eps = (x - a * out) / s
    else:  # velocity
        eps = (s * x + a * out) / (a**2 + s**2)

    if to_param == "noise":
        return eps
    if to_param == "score":
        return -eps / s
    if to_param == "data":
        return (x - s * eps) / a
    # velocity = alpha eps - sigma x_hat
    return a * eps - s * (x - s * eps) / a


_SHIFT_COEF_FROM_NOISE = {
    # linear part of the conversion noise -> P, applied to output shifts
    "noise": lambda a, s: 1.0,
    "score": lambda a, s: -1.0 / s,
    "data": lambda a, s: -s / a,
    "velocity": lambda a, s: (a**2 + s**2) / a,
}


def convert_shift(shift, from_param: str, to_param: str, t: float,
                  schedule: NoiseSchedule):
    """Map an output shift (calibration term) between parametrizations.

    Shifts are input-independent, so only the linear part of the pointwise
    conversion applies.
    """
    for p in (from_param, to_param):
        if p not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {p!r}")
    shift = np.asarray(shift, dtype=float)
    if from_param == to_param:
        return shift
    a, s = _coeffs(schedule, t)
    coef = _SHIFT_COEF_FROM_NOISE[to_param](a, s) / _SHIFT_COEF_FROM_NOISE[from_param](a, s)
    return coef * shift


def optimal_calibration(param: str, mean_output: np.ndarray, mean_x0: np.ndarray | None,
                        t: float, schedule: NoiseSchedule) -> CalibrationTerm:
    """Optimal calibration term given the model's output mean over q_t.

    score / noise:  eta* = mean_output
    data:           eta* = mean_output - E[x_0]
    velocity:       eta* = mean_output + sigma_t E[x_0]
    """
    mean_output = np.asarray(mean_output, dtype=float)
    if param in ("score", "noise"):
        value = mean_output
    elif param in ("data", "velocity"):
        if mean_x0 is None:
            raise ConfigError(f"{param} parametrization needs the data mean E[x_0]")
        mean_x0 = np.asarray(mean_x0, dtype=float)
        if param == "data":
            value = mean_output - mean_x0
        else:
            _, s = alpha_sigma(schedule, t)
            value = mean_output + float(s) * mean_x0
    else:
        raise ConfigError(f"unknown parametrization {param!r}")
    return CalibrationTerm(t=float(t), value=value, parametrization=param)


def objective_gap(param: str, eta, t: float, schedule: NoiseSchedule) -> float:
    """Objective reduction achieved by subtracting the calibration term eta.

    score: ||eta||^2 / 2            noise:    ||eta||^2 / (2 sigma^2)
    data:  alpha^2 ||eta||^2 / (2 sigma^4)    velocity: alpha^2 ||eta||^2 / (2 sigma^2)

    sigma_t is clamped at sigma(T_MIN) since the data row divides by sigma^4.
    """
    if isinstance(eta, CalibrationTerm):
        if eta.parametrization != param:
            raise ConfigError(
                f"calibration term tagged {eta.parametrization!r}, asked for {param!r}"
            )
        eta = eta.value
    eta = np.asarray(eta, dtype=float)
    sq = float(np.sum(eta**2))
    if param == "score":
        return 0.5 * sq
    a, s = alpha_sigma(schedule, max(float(t), T_MIN))
    a, s = float(a), float(s)
    if s == 0.0:
        raise SingularTimeError(f"sigma_t = 0 at t={t}")
    if param == "noise":
        return sq / (2.0 * s**2)
    if param == "data":
        return a**2 * sq / (2.0 * s**4)
    if param == "velocity":
        return a**2 * sq / (2.0 * s**2)
    raise ConfigError(f"unknown parametrization {param!r}")


def _coeff_cols(schedule: NoiseSchedule, t):
    """(alpha, sigma) shaped for broadcasting against (n, k) rows."""
    a, s = alpha_sigma(schedule, t)
    if np.any(s == 0.0):
        raise SingularTimeError("sigma_t = 0 in batch; evaluate at t >= T_MIN")
    if np.ndim(t) == 0:
        return float(a), float(s)
    return a[:, None], s[:, None]


def dsm_target(param: str, x0: np.ndarray, eps: np.ndarray, t,
               schedule: NoiseSchedule) -> np.ndarray:
    """Regression target of the denoising objective for each parametrization.

    ``t`` may be a scalar or a per-row array matched to (n, k) draws.
    """
    if param == "noise":
        return eps
    if param == "data":
        return x0
    a, s = _coeff_cols(schedule, t)
    if param == "score":
        return -eps / s
    if param == "velocity":
        return a * eps - s * x0
    raise ConfigError(f"unknown parametrization {param!r}")


def dsm_weight(param: str, t, schedule: NoiseSchedule):
    """Multiplier w so that the denoising objective is w * E||out - target||^2."""
    t = np.maximum(np.asarray(t, dtype=float), T_MIN)
    if param == "score":
        return 0.5 if t.ndim == 0 else np.full(t.shape, 0.5)
    a, s = alpha_sigma(schedule, t)
    if param == "noise":
        w = 1.0 / (2.0 * s**2)
    elif param == "data":
        w = a**2 / (2.0 * s**4)
    elif param == "velocity":
        w = a**2 / (2.0 * s**2)
    else:
        raise ConfigError(f"unknown parametrization {param!r}")
    return float(w) if t.ndim == 0 else w


def weighting(name: str, t, schedule: NoiseSchedule):
    """Positive loss weighting lambda(t): 'uniform' or 'g-squared'."""
    from .schedule import drift_diffusion

    if name == "uniform":
        t = np.asarray(t, dtype=float)
        return 1.0 if t.ndim == 0 else np.ones(t.shape)
    if name == "g-squared":
        _, g2 = drift_diffusion(schedule, t)
        return float(g2) if np.ndim(t) == 0 else g2
    raise ConfigError(f"unknown weighting {name!r}")
