"""Exception types raised across the package."""


class CavityWalkError(Exception):
    """Base class for all package errors."""


class ValidationError(CavityWalkError, ValueError):
    """An input violates a documented invariant (non-unitary coin, negative probability, ...)."""


class ConfigurationError(CavityWalkError, ValueError):
    """Inconsistent configuration, e.g. mismatched dimensions or overlapping windows."""


class DomainError(ValidationError):
    """A scalar argument lies outside its allowed range."""


class ScalingError(ValidationError):
    """The pulse table carries too much light for single-photon counting."""

    def __init__(self, message, suggested_input_energy=None):
        super().__init__(message)
        self.suggested_input_energy = suggested_input_energy


class EstimationError(CavityWalkError, RuntimeError):
    """A fit or estimate could not be carried out on the available data."""


class SaturationError(EstimationError):
    """Dead-time compensation ran out of surviving trials."""


class AlignmentError(CavityWalkError, ValueError):
    """Two distribution series do not cover the same steps."""
