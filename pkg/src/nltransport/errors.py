"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to converge or stabilize."""


class ModelViolationError(RuntimeError):
    """A model admissibility condition (positivity of the rho denominator,
    hypothesis inequalities, ...) was violated."""


class StepError(NumericalError):
    """A time step's fixed-point solve did not converge."""
