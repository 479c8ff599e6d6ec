"""Exception hierarchy.

Every error raised by the package derives from :class:`BiosessionError`, so
callers (the CLI in particular) can separate data problems from bugs.
"""


class BiosessionError(Exception):
    """Base class for all package errors."""


# --- session model ---------------------------------------------------------

class SchemaError(BiosessionError, ValueError):
    """A session document is missing a required field or has a wrong type."""


class InvariantError(BiosessionError, ValueError):
    """A parsed value violates a domain invariant."""


class NotFound(BiosessionError, LookupError):
    """A requested signal kind or phase is absent."""


class ZeroDuration(BiosessionError, ValueError):
    pass


# --- preprocessing ---------------------------------------------------------

class CutoffTooHigh(BiosessionError, ValueError):
    pass


class EmptyTrace(BiosessionError, ValueError):
    pass


class TooSparse(BiosessionError, ValueError):
    pass


class TooShort(BiosessionError, ValueError):
    pass


class DegenerateBaseline(BiosessionError, ValueError):
    pass


class DegeneratePipeline(BiosessionError, ValueError):
    pass


# --- features --------------------------------------------------------------

class WindowTooSmall(BiosessionError, ValueError):
    pass


# --- statistics ------------------------------------------------------------

class LengthMismatch(BiosessionError, ValueError):
    pass


class ConstantInput(BiosessionError, ValueError):
    pass


class SingleGroup(BiosessionError, ValueError):
    pass


class DegenerateAgreement(BiosessionError, ValueError):
    pass


class MissingCells(BiosessionError, ValueError):
    pass


class AllZeroDiffs(BiosessionError, ValueError):
    pass


class EmptyGroup(BiosessionError, ValueError):
    pass


class OutOfRange(BiosessionError, ValueError):
    pass


class NotConverged(BiosessionError, RuntimeError):
    """IRLS did not reach the tolerance; ``fit`` holds the last iterate."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class GlmOverflow(BiosessionError, RuntimeError):
    """Step halving could not recover a finite, non-increasing deviance."""


# --- clustering ------------------------------------------------------------

class ZeroVariance(BiosessionError, ValueError):
    pass


class PerplexityTooLarge(BiosessionError, ValueError):
    pass


class KTooLarge(BiosessionError, ValueError):
    pass


class SingletonOnly(BiosessionError, ValueError):
    pass


class InvalidClusterCount(BiosessionError, ValueError):
    pass


# --- synth / pipeline ------------------------------------------------------

class SpecError(BiosessionError, ValueError):
    pass


class IncompleteBundle(BiosessionError, FileNotFoundError):
    pass
