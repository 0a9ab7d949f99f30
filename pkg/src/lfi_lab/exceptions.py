"""Exception types raised across the library.

All errors derive from :class:`LfiError`; the ones signalling bad input also
derive from :class:`ValueError` so generic callers can catch them as such.
"""


class LfiError(Exception):
    """Base class for library errors."""


class DegenerateProblemError(LfiError, ValueError):
    """The evidence sum_i prior_i * likelihood_i is zero."""


class DomainError(LfiError, ValueError):
    """A parameter lies outside the problem support."""


class ZeroTotalWeightError(LfiError, ArithmeticError):
    """All particle weights are zero, so a self-normalised estimate is undefined."""


class UndefinedLikelihoodError(LfiError, ValueError):
    """A per-parameter likelihood estimate needs at least one simulation."""


class DegenerateEstimateError(LfiError, ArithmeticError):
    """A plug-in estimate has zero normaliser (no accepted simulations)."""


class DegenerateTargetError(LfiError, ValueError):
    """The target function is constant on the support, so targeting is undefined."""


class InfeasibleAllocationError(LfiError, ValueError):
    """The budget cannot satisfy the requested per-parameter floor."""


class MixtureUnderflowError(LfiError, ArithmeticError):
    """An SMC proposal mixture density evaluated to zero at a drawn particle."""


class InconsistentDensityError(LfiError, RuntimeError):
    """A sampler produced a point where its own density is zero."""
