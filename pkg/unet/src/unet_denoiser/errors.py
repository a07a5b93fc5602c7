"""Error taxonomy shared by the library and the command line.

The three classes map one-to-one onto process exit codes (3, 4, 5) so that
callers driving this tool as a subprocess can dispatch on the code alone;
argparse failures keep their conventional code 2.
"""

__all__ = ["ConfigError", "DataError", "NumericalError"]


class ConfigError(ValueError):
    """Invalid parameter value or inconsistent configuration."""


class DataError(ValueError):
    """Unreadable, malformed, or incompatible input data."""


class NumericalError(RuntimeError):
    """Training or inference produced non-finite values."""
