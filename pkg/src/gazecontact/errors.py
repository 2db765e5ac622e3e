"""Exception types shared across the package.

Each error carries the CLI exit code it maps to.
"""


class GazeContactError(Exception):
    exit_code = 3


class DegenerateInput(GazeContactError):
    """Input data cannot support the requested fit or computation."""


class DimensionMismatch(GazeContactError):
    pass


class ShapeMismatch(GazeContactError):
    pass


class OutOfBounds(GazeContactError):
    pass


class IoError(GazeContactError):
    pass


class ConfigError(GazeContactError):
    exit_code = 2


class NumericFailure(GazeContactError):
    exit_code = 4
