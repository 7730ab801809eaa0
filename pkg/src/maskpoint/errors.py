"""Exception types raised across the package."""


class InputError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInputError(InputError):
    """Input is well-formed but geometrically degenerate (e.g. all points equal)."""


class NonFiniteError(FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class ConfigMismatchError(InputError):
    """A checkpoint or config does not match the model it is applied to."""


class FormatError(ValueError):
    """A binary file is corrupt, truncated or of an unknown version."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ParseError(ValueError):
    """A text point-cloud file failed to parse.

    ``line`` and ``column`` are 1-based.
    """

    def __init__(self, line, column, message):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")
