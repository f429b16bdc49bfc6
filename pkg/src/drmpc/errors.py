"""Exception hierarchy shared across the package."""


class DrmpcError(Exception):
    """Base class for all package errors."""


class ConfigError(DrmpcError):
    """Malformed or inconsistent configuration."""


class StructuralError(DrmpcError):
    """A structural precondition of the controller does not hold."""


class DomainError(DrmpcError, ValueError):
    """An argument lies outside the domain of a formula."""


class SolverError(DrmpcError):
    """An optimization routine failed to produce a usable answer."""


class ControllerError(SolverError):
    """The cutting-plane controller could not return an input sequence."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ContractionWarning(UserWarning):
    """The pre-stabilized state matrix is not a spectral-norm contraction."""
