"""Exception types shared across the package."""


class CtbmcError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(CtbmcError):
    """A model, path, or configuration violates a structural requirement."""


class ParseError(CtbmcError):
    """A serialized file does not follow the documented grammar."""


class LogmError(CtbmcError):
    """The principal matrix logarithm does not exist or could not be trusted."""


class StationaryError(CtbmcError):
    """The stationary system is singular, ambiguous, or produced negative mass."""


class ZeroLikelihoodError(CtbmcError):
    """The observed path has zero (or numerically underflowed) likelihood."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class DegenerateStateError(CtbmcError):
    """A reestimation step assigned zero expected dwell to a state that jumps."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
