"""Error types shared across the package.

Argument validation raises plain ``ValueError``. The two classes below
mark failures that callers (in particular the CLI) treat differently:
bad configuration input versus numerical breakdown at runtime.
"""


class ConfigError(ValueError):
    """A configuration file or experiment spec is invalid."""


class NumericError(RuntimeError):
    """A numerical routine failed (factorization, divergence, ...)."""
