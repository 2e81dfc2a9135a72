"""Exception hierarchy shared by the pipeline stages.

The CLI maps these onto exit codes: data errors exit 2, numeric failures exit 3.
"""


class SldSedError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SldSedError, ValueError):
    pass


class DataError(SldSedError):
    """Malformed or unreadable on-disk artifact (manifest, wav, checkpoint)."""


class GenerationFailure(DataError):
    pass


class InfeasibleLabel(SldSedError, ValueError):
    """Label sequence cannot be aligned to the available number of frames."""

    def __init__(self, message, clip_id=None):
        if clip_id is not None:
            message = f"{clip_id}: {message}"
        super().__init__(message)
        self.clip_id = clip_id


class NumericFailure(SldSedError, ArithmeticError):
    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class StateError(SldSedError, RuntimeError):
    pass
