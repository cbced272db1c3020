"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when array dimensions violate an operation's contract."""


class ConfigError(ValueError):
    """Raised for invalid configuration values, keys, or files."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ValueError):
    """Raised when a binary container is malformed.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DivergenceError(RuntimeError):
    """Raised when an iterative solver produces a non-finite objective."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, step):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


class StageError(RuntimeError):
    """Wraps an error raised inside one unfolding stage with the stage index."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause
