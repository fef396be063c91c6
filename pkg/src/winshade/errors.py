"""Exception types shared across the package."""


class WinshadeError(Exception):
    """Base class for all package errors."""


class DimensionError(WinshadeError):
    """Shapes or extents are incompatible with the requested operation."""


class TapeError(WinshadeError):
    """Invalid use of a gradient tape (reuse, loss not recorded, ...)."""


class ParameterError(WinshadeError):
    """Unknown parameter name or invalid hyperparameter value."""


class ConfigError(WinshadeError):
    """Run-configuration file is malformed or fails validation."""


class CheckpointError(WinshadeError):
    """Checkpoint file is corrupt, truncated, or of an unsupported version."""


class ImageIOError(WinshadeError):
    """Image file is unreadable or exceeds size limits."""


class TrainingDiverged(WinshadeError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, lr: float, max_abs_grad: float):
        self.step = step
        self.lr = lr
        self.max_abs_grad = max_abs_grad
        super().__init__(
            f"non-finite loss at step {step} (lr={lr:g}, max|grad|={max_abs_grad:g})"
        )
