"""Exception types shared across the package."""


class LayerProbeError(Exception):
    """Base class for all errors raised by layerprobe."""


class InvalidArgumentError(LayerProbeError, ValueError):
    pass


class TrainingDivergedError(LayerProbeError, RuntimeError):
    def __init__(self, iteration, loss):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class DataNotFoundError(LayerProbeError, FileNotFoundError):
    pass


class CorruptDataError(LayerProbeError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FormatError(LayerProbeError, ValueError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class ConfigError(LayerProbeError, ValueError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column
