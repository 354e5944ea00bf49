"""Exception types shared across the package."""


class ConfigError(ValueError):
    """An encoder/model configuration is internally inconsistent."""


class NumericError(ValueError):
    """An operation received non-finite values."""


class FormatError(ValueError):
    """A token-grid file failed validation on load."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the failing location."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )
