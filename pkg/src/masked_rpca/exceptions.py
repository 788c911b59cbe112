"""Exception types raised across the package."""


class MaskedRPCAError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MaskedRPCAError, ValueError):
    pass


class DimensionMismatchError(MaskedRPCAError, ValueError):
    pass


class UnreadableFileError(MaskedRPCAError, OSError):
    pass


class UnsupportedPixelDepthError(MaskedRPCAError, ValueError):
    pass


class InfeasibleSpecError(MaskedRPCAError, ValueError):
    """A synthetic scene specification cannot be realized."""


class SpecParseError(MaskedRPCAError, ValueError):
    def __init__(self, message, lineno=None, line=None):
        self.lineno = lineno
        self.line = line
        if lineno is not None:
            message = f"line {lineno}: {message}"
            if line is not None:
                message += f"\n    {line.rstrip()}"
        super().__init__(message)


class DegenerateInputError(MaskedRPCAError, ValueError):
    """Input has no class split (constant values or single-class ground truth)."""
