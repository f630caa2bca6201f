"""Exception types raised across the package."""


class EpimatchError(Exception):
    """Base class for all package errors."""


class ConfigError(EpimatchError, ValueError):
    pass


class DimMismatch(EpimatchError, ValueError):
    pass


# matching_loss and friends use the same condition under a different name
ShapeMismatch = DimMismatch


class NonPositiveDepth(EpimatchError, ValueError):
    pass


class DegenerateBaseline(EpimatchError, ValueError):
    pass


class DegenerateLine(EpimatchError, ValueError):
    pass


class InvalidBBox(EpimatchError, ValueError):
    pass


class EmptyView(EpimatchError, RuntimeError):
    pass


class EmptyEdgeSet(EpimatchError, ValueError):
    pass


class TooLarge(EpimatchError, ValueError):
    pass


class CoverageMismatch(EpimatchError, ValueError):
    pass


class LengthMismatch(EpimatchError, ValueError):
    pass


class NoImprovement(EpimatchError, RuntimeError):
    """Training finished without lowering the loss.

    The fitted model is attached so callers can still inspect it.
    """

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model


class FormatError(EpimatchError, ValueError):
    """A file could not be parsed; the message carries path and line."""

    def __init__(self, message, path=None, line=None, column=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:{column or 1}:"
            loc += " "
        super().__init__(loc + message)
        self.path, self.line, self.column = path, line, column
