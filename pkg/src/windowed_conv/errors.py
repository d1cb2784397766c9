"""Exception types raised across the package."""


class InvalidConfigError(ValueError):
    pass


class InvalidArgumentError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class InputTooSmallError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    """Malformed checkpoint header; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CheckpointTruncatedError(CheckpointFormatError):
    pass


class TrainingDivergedError(RuntimeError):
    """Carries the last finite model and the loss curve up to the failure."""

    def __init__(self, step: int, loss: float, model=None, curve=None):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
        self.model = model
        self.curve = list(curve or [])
