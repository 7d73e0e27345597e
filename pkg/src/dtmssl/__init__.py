"""Semi-supervised classification with per-class dynamic confidence thresholds."""

from dtmssl.errors import ConfigError, DimensionError, ValidationError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionError", "ValidationError", "__version__"]
