"""Exception types shared across the package."""


class HetsemError(Exception):
    """Base class for package-specific errors."""


class ParseError(HetsemError, ValueError):
    """Malformed input file or invalid configuration value."""


class DimensionError(HetsemError, ValueError):
    """Inconsistent shapes between data arrays, designs, and weights."""


class ConvergenceError(HetsemError, RuntimeError):
    """A numerical routine failed in a way that has no recovery path."""
