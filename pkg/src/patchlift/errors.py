"""Exception taxonomy shared across the package.

User-facing problems (bad config values, malformed inputs, missing files)
derive from :class:`UserError` and map to CLI exit code 1. Violations of
internal contracts derive from :class:`InternalError` and map to exit code 2.
"""


class UserError(Exception):
    """A problem the caller can fix (config, paths, input shapes)."""


class InternalError(Exception):
    """An invariant the package itself is responsible for was violated."""


class ConfigError(UserError):
    """Invalid or unknown configuration value."""


class ShapeError(UserError):
    """Array arguments have incompatible shapes."""


class DataError(UserError):
    """Dataset files are missing, unreadable, or malformed."""


class DegenerateViewError(UserError):
    """Camera/surface combination yields no usable projection."""


class ContractError(InternalError):
    """A caller violated an operation's precondition."""


class InvariantError(InternalError):
    """A generated artifact failed its own validity checks."""
