"""Exception types shared across the package."""


class DomainError(ValueError):
    """A time argument lies outside the schedule horizon [0, T]."""


class OrderingError(ValueError):
    """A timestep pair violates the required ordering s <= t (or s < t)."""


class SingularTimeError(ValueError):
    """An operation that divides by sigma_t was requested where sigma_t = 0."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad key, tag mismatch, ...)."""


class ParseError(ValueError):
    """A serialized artifact could not be parsed; message carries line info."""


class RangeError(ValueError):
    """A lookup fell outside the stored range (tables never extrapolate)."""


class EstimationError(RuntimeError):
    """A Monte Carlo estimate could not be formed (e.g. absent label)."""


class TrainingError(RuntimeError):
    """Training diverged; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class DivergenceError(RuntimeError):
    """A sampler produced a non-finite state; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
