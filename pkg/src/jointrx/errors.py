"""Exception types raised by the message-passing primitives."""


class JointrxError(Exception):
    """Base class for all package-specific errors."""


class NonpositivePrecision(JointrxError):
    """Gaussian division would produce a message with negative precision."""


class SingularMatrix(JointrxError):
    """A linear-Gaussian solve hit a numerically singular system."""


class ZeroModulusSymbol(JointrxError):
    """A constellation point with zero modulus cannot invert the channel."""


class DegenerateSymbolBelief(JointrxError):
    """Symbol belief with zero second moment carries no channel information."""


class BothFlat(JointrxError):
    """Combining two flat messages leaves the belief undefined."""


class AllZeroLikelihood(JointrxError):
    """Every symbol hypothesis has zero weight; no bit information exists."""
