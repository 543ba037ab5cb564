"""Exception hierarchy shared across the package."""


class BnnBoError(Exception):
    """Base class for all package errors."""


class OutOfBounds(BnnBoError, ValueError):
    pass


class NonFinite(BnnBoError, FloatingPointError):
    """A leapfrog trajectory or an evaluation produced NaN/Inf."""


class Divergence(BnnBoError):
    """HMC burn-in produced too many non-finite proposals."""


class InsufficientCandidates(BnnBoError):
    pass


class EvaluatorFailure(BnnBoError):
    """A single evaluation failed; the run may continue without it."""


class ProtocolError(BnnBoError):
    pass


class EvaluatorTimeout(EvaluatorFailure, TimeoutError):
    pass


class ChildExit(BnnBoError):
    """The external simulator process terminated."""


class ConfigError(BnnBoError, ValueError):
    pass


class CorruptCheckpoint(BnnBoError):
    pass


class NoResults(BnnBoError):
    pass
