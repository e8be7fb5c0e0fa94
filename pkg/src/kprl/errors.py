"""Exception types shared across the package."""


class KprlError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(KprlError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ParseError(KprlError):
    """A corpus, annotation, or model file could not be parsed.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class ConfigError(KprlError, ValueError):
    """Invalid or inconsistent run configuration."""


class NumericError(KprlError, ArithmeticError):
    """Training or inference produced non-finite values."""


class GenerationError(KprlError):
    """The synthetic grammar could not satisfy a generation request."""
