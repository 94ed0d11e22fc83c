"""Exception taxonomy shared by all modules.

Exit-code mapping used by the CLI: usage errors -> 1, structural/format
errors -> 2, numeric failures (degenerate statistics, divergence) -> 3.
"""


class VtError(Exception):
    """Base class for all toolkit errors."""


class UsageError(VtError):
    """Bad command-line arguments or config keys."""


class StructuralError(VtError):
    """Domain data violates a declared invariant (missing articulator,
    wrong vector length, non-finite value, ...)."""


class FormatError(VtError):
    """A file does not conform to its declared on-disk format."""


class BadMagicError(FormatError):
    """Wrong magic bytes or unsupported version."""


class TruncatedFileError(FormatError):
    """File shorter than its header promises."""


class NonFinitePayloadError(FormatError):
    """Binary payload contains NaN or infinity."""


class ParseError(FormatError):
    """Text file failed to parse; message carries the line number."""


class DegenerateDataError(VtError):
    """Numeric operation undefined for this input (zero variance,
    rank-deficient covariance, all-zero differences, ...)."""


class DivergenceError(VtError):
    """Training produced a non-finite loss."""
