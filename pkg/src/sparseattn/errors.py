"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class ValidityError(ValueError):
    """A validity mask leaves nothing to work with (e.g. all-padded sequence)."""


class DataError(ValueError):
    """Bad input data: unreadable files, malformed lines, out-of-range ids."""


class InvariantError(RuntimeError):
    """A numeric invariant that should hold by construction was violated."""


class StateError(RuntimeError):
    """Required cached state is missing or inconsistent."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""


class ZeroVarianceError(ValueError):
    """Correlation is undefined because one input has zero variance."""
