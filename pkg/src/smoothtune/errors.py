"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called in a way its contract forbids (shape mismatch, wrong tape, ...)."""


class InputError(ValueError):
    """User-supplied data is invalid (bad label, out-of-range token id, malformed record, ...)."""


class CheckpointError(ValueError):
    """A checkpoint file could not be loaded (bad version, truncated, corrupt)."""


class ConfigError(ValueError):
    """A run configuration is invalid; message lists every offending key."""
