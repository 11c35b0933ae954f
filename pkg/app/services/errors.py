"""Error types and user-facing failure copy.

Single source of truth for what the CLI prints when a command fails and
which exit code it returns. Library code raises the typed errors below;
only `app.main` turns them into messages and exit codes.
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GENERIC_FAILURE_MSG = "Unexpected failure; see the log above for the traceback."


class GensmoothError(Exception):
    exit_code = EXIT_UNEXPECTED


class DomainError(GensmoothError, ValueError):
    """Precondition violated: wrong dimension, invalid order, non-finite input."""

    exit_code = EXIT_NUMERIC


class NumericError(GensmoothError, ArithmeticError):
    """Non-finite intermediate or a solver that failed to converge."""

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


class ConfigError(GensmoothError):
    exit_code = EXIT_CONFIG

    def __init__(self, message: str, key_path: str | None = None):
        super().__init__(message)
        self.key_path = key_path


class DataFormatError(GensmoothError):
    exit_code = EXIT_DATA

    def __init__(self, message: str, byte_offset: int | None = None, path: str | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset
        self.path = path


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, GensmoothError):
        return exc.exit_code
    return EXIT_UNEXPECTED


def to_user_message(exc: BaseException) -> str:
    """Map an exception to one line of CLI output.

    - ConfigError      -> "config error at <key>: ..."
    - DataFormatError  -> "data error in <path> at byte <offset>: ..."
    - NumericError     -> "numeric error (layer N): ..."
    - other typed      -> the message as-is
    - anything else    -> generic message (traceback goes to the log only)
    """
    if isinstance(exc, ConfigError):
        where = f" at {exc.key_path}" if exc.key_path else ""
        return f"config error{where}: {exc}"
    if isinstance(exc, DataFormatError):
        where = f" in {exc.path}" if exc.path else ""
        offset = f" at byte {exc.byte_offset}" if exc.byte_offset is not None else ""
        return f"data error{where}{offset}: {exc}"
    if isinstance(exc, NumericError):
        layer = f" (layer {exc.layer_index})" if exc.layer_index is not None else ""
        return f"numeric error{layer}: {exc}"
    if isinstance(exc, GensmoothError):
        return str(exc)
    return GENERIC_FAILURE_MSG
