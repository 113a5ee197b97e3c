"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file or byte stream does not conform to its documented layout."""


class ConfigError(ValueError):
    """A pipeline configuration is missing, malformed, or inconsistent."""


class NumericError(RuntimeError):
    """A numerical routine failed to produce a usable result."""


class GradientUnavailableError(NumericError):
    """Too few (or degenerate) neighbor candidates to estimate response gradients."""
