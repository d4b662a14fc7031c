"""Exception types shared across the package."""


class SteinThermoError(Exception):
    """Base class for all package errors."""


class SupportError(SteinThermoError):
    """The support of the first argument is not contained in that of the second."""


class CertificationError(SteinThermoError):
    """Two independent evaluation routes disagree beyond tolerance."""


class PreconditionError(SteinThermoError):
    """An operation was called outside the domain where its guarantee holds."""


class DegenerateError(SteinThermoError):
    """A spectral gap needed by the construction is (numerically) zero."""


class CapError(SteinThermoError):
    """A requested dimension exceeds the configured cap."""


class SolverError(SteinThermoError):
    """An SDP solve did not reach optimality."""
