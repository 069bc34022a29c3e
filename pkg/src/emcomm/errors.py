"""Error taxonomy shared across the package.

UsageError and ConfigError map to CLI exit code 1, everything else that
escapes maps to exit code 2.
"""


class UsageError(ValueError):
    """Caller violated a documented precondition (bad argument, missing file)."""


class ConfigError(UsageError):
    """Configuration file or config dict is invalid (unknown key, bad value)."""


class ParseError(UsageError):
    """A structured text input could not be parsed; message names the line."""


class CheckpointError(RuntimeError):
    """Checkpoint bytes are corrupt, truncated, or of an unknown version."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
