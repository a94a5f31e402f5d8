"""Exception hierarchy.

``PipelineError`` subclasses are the estimation failures the CLI maps to
exit code 4.
"""


class MPFError(Exception):
    """Base class for all package errors."""


class ConfigError(MPFError, ValueError):
    pass


class NonFinite(MPFError, ValueError):
    pass


class DefectiveMatrix(MPFError):
    pass


class ZeroColumn(MPFError, ValueError):
    pass


class DimensionMismatch(MPFError, ValueError):
    pass


class NonUniformTimes(MPFError, ValueError):
    pass


class OrderTooHigh(MPFError, ValueError):
    pass


class NoMatch(MPFError):
    pass


class EmptyInput(MPFError, ValueError):
    pass


class BelowThreshold(MPFError, ValueError):
    pass


class NoFeasiblePeer(MPFError):
    pass


class Singular(MPFError):
    pass


class NoValidSegments(MPFError):
    pass


class ZeroDenominator(MPFError, ZeroDivisionError):
    pass


class DisconnectedGroups(MPFError):
    pass


class PipelineError(MPFError):
    """Dataset cannot support the estimation pipeline."""


class InsufficientPairs(PipelineError):
    pass


class DegenerateGeometry(PipelineError):
    pass


class IllConditioned(PipelineError):
    pass


class PartialObservability(PipelineError):
    """Fewer modes identified than the full path needs.

    Use :func:`mpfest.estimator.estimate_mpf_partial` instead.
    """
