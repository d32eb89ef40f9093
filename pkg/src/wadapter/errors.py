"""Exception types shared across the package."""


class WAdapterError(Exception):
    """Base class for all package errors."""


class ShapeError(WAdapterError):
    """Tensor or image dimensions do not match the expected contract."""


class ConfigurationError(WAdapterError):
    """Invalid option, unknown profile/attribute, or inconsistent setup."""


class StateError(WAdapterError):
    """Operation not valid in the current attach/detach state."""


class TokenizationError(WAdapterError):
    """Caption contains words outside the grammar vocabulary."""


class ValidationError(WAdapterError):
    """Input data violates a documented precondition."""


class GenerationError(WAdapterError):
    """Procedural data generation failed (e.g. placement rejection cap hit)."""
