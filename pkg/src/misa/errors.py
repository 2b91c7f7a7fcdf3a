"""Exception types shared across the package."""


class MisaError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MisaError, ValueError):
    """A parameter or input is outside its valid domain."""


class DefinitenessError(MisaError, ValueError):
    """A matrix required to be positive definite is not."""


class RankError(MisaError, ValueError):
    """A matrix does not have the required rank."""


class ShapeError(MisaError, ValueError):
    """Inputs have inconsistent shapes."""


class ParseError(MisaError, ValueError):
    """A persisted matrix or config file could not be parsed."""


class ConfigError(MisaError, ValueError):
    """An experiment configuration is invalid."""
