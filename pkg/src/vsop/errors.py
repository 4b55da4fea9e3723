"""Exception types shared across the package."""


class ConfigError(Exception):
    """Bad configuration file or inconsistent experiment description."""


class IngestionError(Exception):
    """Malformed measured-data file (spectrum or relaxation series)."""


class NumericError(Exception):
    """Numerical failure (integrator underflow, non-finite model output)."""
