"""Model handles: anything with a ``parametrization`` tag and ``__call__(x, t)``.

Samplers, calibrators, and verifiers all consume this duck-typed interface.
The wrappers here cover the exact oracle (optionally conditional), additive
bias injection for controlled experiments, constant predictors, and
parametrization conversion.  Trained networks get their handle in ``nets``;
the calibrated wrapper lives in ``calibrate``.
"""

from __future__ import annotations

import inspect
from typing import Callable

import numpy as np

from . import mixture as mx
from .errors import ConfigError
from .parametrize import PARAMETRIZATIONS, convert
from .schedule import NoiseSchedule


class OracleModel:
    """Exact data score of a Gaussian mixture, exposed under any
    parametrization.  With ``conditional=True`` the handle requires a label y
    and returns the conditional score of component y."""

    def __init__(self, mix: mx.GaussianMixture, schedule: NoiseSchedule,
                 parametrization: str = "score", conditional: bool = False):
        if parametrization not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {parametrization!r}")
        self.mixture = mix
        self.schedule = schedule
        self.parametrization = parametrization
        self.conditional = conditional

    def __call__(self, x, t, y=None):
        if self.conditional:
            if y is None:
                raise ConfigError("conditional oracle requires a label y")
            s = mx.conditional_score(self.mixture, self.schedule, x, t, int(y))
        else:
            s = mx.score(self.mixture, self.schedule, x, t)
        return convert(s, "score", self.parametrization, x, t, self.schedule)

    def describe(self) -> str:
        return f"oracle({self.parametrization}{', conditional' if self.conditional else ''})"


class BiasedModel:
    """Base model plus an input-independent bias b(t) (or b(t, y)).

    ``bias`` may be a fixed vector, a callable of t, or a callable of (t, y)
    for per-label biases on conditional models.
    """

    def __init__(self, base, bias: Callable[..., np.ndarray] | np.ndarray):
        self.base = base
        self.parametrization = base.parametrization
        if callable(bias):
            self._bias = bias
            self._takes_label = len(inspect.signature(bias).parameters) >= 2
        else:
            vec = np.asarray(bias, dtype=float)
            self._bias = lambda t: vec
            self._takes_label = False

    def bias(self, t, y=None):
        if self._takes_label:
            return np.asarray(self._bias(t, y), dtype=float)
        return np.asarray(self._bias(t), dtype=float)

    def __call__(self, x, t, y=None):
        if y is None:
            return self.base(x, t) + self.bias(t)
        return self.base(x, t, y) + self.bias(t, y)

    def describe(self) -> str:
        return f"biased({getattr(self.base, 'describe', lambda: 'model')()})"


class ConstantModel:
    """Predicts a fixed vector regardless of (x, t); handy for exactness
    tests of exponential integrators."""

    def __init__(self, value, parametrization: str = "noise"):
        self.value = np.asarray(value, dtype=float)
        self.parametrization = parametrization

    def __call__(self, x, t, y=None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.value.copy()
        return np.broadcast_to(self.value, x.shape).copy()

    def describe(self) -> str:
        return "constant"


class ConvertedModel:
    """View of a model under a different parametrization."""

    def __init__(self, base, to: str, schedule: NoiseSchedule):
        if to not in PARAMETRIZATIONS:
            raise ConfigError(f"unknown parametrization {to!r}")
        self.base = base
        self.schedule = schedule
        self.parametrization = to

    def __call__(self, x, t, y=None):
        out = self.base(x, t) if y is None else self.base(x, t, y)
        return convert(out, self.base.parametrization, self.parametrization, x, t, self.schedule)

    def describe(self) -> str:
        return f"as-{self.parametrization}({getattr(self.base, 'describe', lambda: 'model')()})"


def as_parametrization(model, to: str, schedule: NoiseSchedule):
    if model.parametrization == to:
        return model
    return ConvertedModel(model, to, schedule)


def score_fn(model, schedule: NoiseSchedule):
    """Callable (x, t) -> score, whatever the model predicts natively."""
    return lambda x, t: convert(model(x, t), model.parametrization, "score", x, t, schedule)


def noise_fn(model, schedule: NoiseSchedule):
    """Callable (x, t) -> noise prediction."""
    return lambda x, t: convert(model(x, t), model.parametrization, "noise", x, t, schedule)
