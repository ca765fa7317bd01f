"""Exception types shared across the package."""


class FlowFormatError(ValueError):
    """Malformed .flo file (bad magic, bad dimensions, truncated payload)."""


class EmptySelectionError(ValueError):
    """An operation required at least one selected pixel and got none."""


class DegenerateGeometryError(ValueError):
    """Point configuration too degenerate to fit a transform."""


class ConfigError(ValueError):
    """Invalid pipeline configuration or CLI arguments (exit code 1)."""


class MissingStageError(RuntimeError):
    """A required upstream artifact is missing (exit code 2)."""
