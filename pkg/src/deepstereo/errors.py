"""Exception hierarchy shared across the package.

Every error carries the process exit code the CLI maps it to, so failure
classes stay consistent between library callers and the command line.
"""


class DeepStereoError(Exception):
    exit_code = 1


class ContractViolation(DeepStereoError):
    """An operation was called with arguments that break its contract."""

    exit_code = 2


class ConfigurationError(DeepStereoError):
    """A config value (or combination of values) is invalid."""

    exit_code = 2


class InputOutputError(DeepStereoError):
    """File-level failure: missing path, refused overwrite, bad container."""

    exit_code = 3


class ParseError(InputOutputError):
    """Malformed file content; reports the byte offset where parsing died."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericFault(DeepStereoError):
    """A forward op produced NaN/Inf; message names the offending op."""

    exit_code = 4


class VerificationFailure(DeepStereoError):
    """A self-check (gradient suite, oracle comparison) did not pass."""

    exit_code = 5
