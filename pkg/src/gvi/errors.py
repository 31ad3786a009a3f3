"""Exception types raised across the package."""


class GviError(Exception):
    """Base class for all package errors."""


class InvalidParameters(GviError, ValueError):
    """Distribution or specification parameters violate their invariants."""


class OutOfSupport(GviError, ValueError):
    """A point lies outside the support of a distribution."""


class OutsideNaturalSpace(GviError, ValueError):
    """Natural parameters outside the natural parameter space."""


class FamilyMismatch(GviError, ValueError):
    pass


class NoClosedForm(GviError):
    """The requested quantity has no closed form for this configuration."""


class NotClosedForm(NoClosedForm):
    """A closed-form divergence fails its feasibility predicate."""


class HyperparameterOne(GviError, ValueError):
    pass


class UnsupportedFamily(GviError, ValueError):
    pass


class NonConjugate(GviError, ValueError):
    pass


class Infeasible(GviError):
    """Quasi-conjugate feasibility fails for one observation."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"observation {index} violates the natural-space condition")


class EstimatorMismatch(GviError, ValueError):
    pass


class NonFinite(GviError, FloatingPointError):
    def __init__(self, iteration: int, what: str = "objective or gradient"):
        self.iteration = iteration
        super().__init__(f"non-finite {what} at iteration {iteration}")


class NoConvergence(GviError):
    pass


class ConfigError(GviError, ValueError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ParseError(GviError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
