"""Exception hierarchy shared across the engine."""


class LFNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LFNetError, ValueError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TopologyError(LFNetError, ValueError):
    pass


class BackwardError(LFNetError, ValueError):
    """Backward called with statistics or a trace it cannot use."""


class ModelFileError(LFNetError):
    pass


class ModelFormatError(ModelFileError):
    """Bad magic bytes or an undecodable header."""


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


class ImageFormatError(LFNetError):
    pass


class NetpbmHeaderError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


class TrainingDivergedError(LFNetError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConfigError(LFNetError, ValueError):
    pass
