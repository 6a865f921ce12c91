"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid network, loss, or experiment configuration."""


class EmptyMaskError(ValueError):
    """A surface-distance metric was asked to measure an empty mask."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch, step, batch_ids, breakdown):
        self.epoch = epoch
        self.step = step
        self.batch_ids = list(batch_ids)
        self.breakdown = dict(breakdown)
        super().__init__(
            f"non-finite loss at epoch {epoch} step {step} "
            f"(batch {self.batch_ids}): {self.breakdown}"
        )


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or incompatible."""
