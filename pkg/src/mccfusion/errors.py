"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A parameter violates its documented constraint."""


class GeometryError(ValueError):
    """Anchor geometry is degenerate (normal equations are singular)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``last`` holds the final iterate and ``residual`` the last step or
    residual norm so callers can decide whether it is usable anyway.
    """

    def __init__(self, message, last=None, iterations=None, residual=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations
        self.residual = residual


class NumericalError(ArithmeticError):
    """A matrix that must be inverted is singular or non-finite."""


class InconsistencyError(ValueError):
    """Measurement components disagree with the availability mask."""


class ConfigError(ValueError):
    """Bad configuration file or value; carries the key and line number."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class EpisodeAborted(RuntimeError):
    """A closed-loop episode hit a numerical failure at step ``step``."""

    def __init__(self, message, step, diagnostics=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.diagnostics = diagnostics or {}
