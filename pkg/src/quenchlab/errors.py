"""Exception types shared across the package."""


class QuenchlabError(Exception):
    """Base class for all package errors."""


class DomainError(QuenchlabError, ValueError):
    """A parameter lies outside the domain where a formula or law is defined."""


class CapacityError(QuenchlabError, ValueError):
    """A requested computation exceeds an enumeration or memory guard."""


class ContractViolation(QuenchlabError, ValueError):
    """Inputs are inconsistent with each other (shapes, arities, model kinds)."""


class ConfigError(QuenchlabError, ValueError):
    """A plan or model configuration could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
