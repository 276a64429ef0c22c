"""Exception hierarchy shared by every pdanet module."""


class PdanetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PdanetError, ValueError):
    """Operand shapes do not agree."""


class ShapeError(DimensionError):
    """Operand has the wrong rank for the operation."""


class ConfigurationError(PdanetError, ValueError):
    """Invalid configuration value or combination."""


class ContractError(PdanetError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(PdanetError, ValueError):
    """Malformed byte stream or file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(PdanetError, ValueError):
    """Malformed manifest or config line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LabelRangeError(ParseError):
    """A label value lies outside [0, 1]."""


class DegenerateMetricError(PdanetError, ValueError):
    """A metric is undefined for the given data (e.g. zero variance)."""

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class TrainingError(PdanetError, RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
