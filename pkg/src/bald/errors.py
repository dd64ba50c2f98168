"""Exception hierarchy shared across the package."""


class BaldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BaldError, ValueError):
    """Invalid parameters or missing required inputs."""


class DataError(BaldError, ValueError):
    """Input data violates a precondition (non-finite values, bad M0, ...)."""


class EstimationError(BaldError, RuntimeError):
    """Noise-curve estimation could not produce a usable result."""


class ContractError(BaldError, RuntimeError):
    """A plug-in or internal stage broke its declared contract."""
