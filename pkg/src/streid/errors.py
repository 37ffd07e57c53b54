"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """Operation inputs violate a documented precondition."""


class ConfigurationError(ValueError):
    """Configuration parameters are outside their valid range."""


class FormatError(ValueError):
    """An on-disk artifact is malformed or internally inconsistent."""
