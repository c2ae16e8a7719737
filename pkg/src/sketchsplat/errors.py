"""Exception types shared across the package."""


class SplatError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SplatError, ValueError):
    pass


class FormatError(SplatError, ValueError):
    """A file could not be decoded or its header is malformed."""


class LengthError(FormatError):
    """A binary payload is shorter than its header promises."""


class MissingEntryError(SplatError, FileNotFoundError):
    pass


class ProtocolError(SplatError, RuntimeError):
    """An external provider returned data that violates the exchange contract."""


class PreconditionError(SplatError, RuntimeError):
    pass


class BehindCameraError(SplatError, ValueError):
    """Raised when a point lies at or behind the near plane."""


class FitError(SplatError, RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step
