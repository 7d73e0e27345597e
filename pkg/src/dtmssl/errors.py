"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class ConfigError(ValueError):
    """Invalid configuration or dataset specification."""


class ValidationError(ValueError):
    """Invalid label/prediction input or missing run artifacts."""
