"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit status the CLI reports for it.
"""


class EvoCFError(Exception):
    exit_code = 1


class ConfigError(EvoCFError):
    exit_code = 1


class DataError(EvoCFError):
    exit_code = 2


class ParseError(DataError):
    """Malformed input text.

    ``line`` is the 1-based line number for file input, ``field`` the record
    field that could not be read; either may be None.
    """

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


class NumericError(EvoCFError):
    exit_code = 3


class StateError(EvoCFError):
    exit_code = 4


class CheckpointError(StateError):
    def __init__(self, message: str, missing: list[str] | None = None):
        self.missing = list(missing or [])
        if self.missing:
            message = f"{message} (missing: {', '.join(self.missing)})"
        super().__init__(message)
