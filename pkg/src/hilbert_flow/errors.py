"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """Bad shapes, out-of-range labels, invalid parameters."""


class NumericalError(ArithmeticError):
    """A function produced a non-finite value where a finite one was required."""


class DegenerateEnsembleError(ValueError):
    """The ensemble is too small or too collapsed for the requested statistic."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this kind of target."""


class DivergenceError(NumericalError):
    """A particle update became non-finite."""

    def __init__(self, particle, step, message=None):
        self.particle = particle
        self.step = step
        super().__init__(message or f"non-finite update for particle {particle} at step {step}")


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
