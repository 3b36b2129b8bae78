"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge or met an ill-conditioned input."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class CapabilityError(RuntimeError):
    """The request is valid but exceeds a configured resource cap."""


class ModelValidityError(RuntimeError):
    """A modelling approximation is used outside the regime where it holds."""


class AmbiguityError(ValueError):
    """A request does not single out a unique answer (e.g. degenerate eigenvalue)."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)
