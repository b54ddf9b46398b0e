"""Error taxonomy shared by all subsystems."""


class SharpshiftError(Exception):
    """Base class for every error raised by this package."""


class AugmentationError(SharpshiftError):
    """Invalid input to an augmentation primitive (shapes, batch size, alpha)."""


class ContractViolationError(SharpshiftError):
    """A loss-function precondition was violated (non-unit features, bad batch)."""


class OptimizerError(SharpshiftError):
    """Non-finite loss or gradient inside an optimizer step."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ModelError(SharpshiftError):
    """Encoder shape mismatch, bad parameter vector, or checkpoint corruption."""


class MetricError(SharpshiftError):
    """Shift-gap estimation failed (e.g. a class has no examples)."""


class LabError(SharpshiftError):
    """Bound-lab enumeration guard exceeded or invalid world."""


class EvaluationError(SharpshiftError):
    """Linear-probe / attack evaluation failed its preconditions."""


class IngestionError(SharpshiftError):
    """Dataset file is malformed; carries the byte offset when known."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class PipelineError(SharpshiftError):
    """Training-loop failure; carries the last good checkpoint if one exists."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
