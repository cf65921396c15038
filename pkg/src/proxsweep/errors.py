"""Exception types raised by the solvers and geometry routines."""


class ProxSweepError(Exception):
    """Base class for all package errors."""


class NoConvergence(ProxSweepError):
    """An iterative geometric routine exceeded its iteration budget."""


class OutsideProxTube(ProxSweepError):
    """The point is too far from the set for a unique projection."""

    def __init__(self, message, distance=None, limit=None):
        super().__init__(message)
        self.distance = distance
        self.limit = limit


class NotOnBoundary(ProxSweepError):
    """A boundary point was required but |G - 1| exceeds the level tolerance."""


class SweepGateViolated(ProxSweepError):
    """A time step moves the inputs too far for the prox tube.

    ``refine_factor`` is the suggested grid refinement factor.
    """

    def __init__(self, message, step=None, margin=None, refine_factor=None):
        super().__init__(message)
        self.step = step
        self.margin = margin
        self.refine_factor = refine_factor


class NotAContraction(ProxSweepError):
    """The feedback map gives delta >= 1 (or delta* >= 1)."""


class MaxIterExceeded(ProxSweepError):
    """Picard iteration did not reach the tolerance.

    The partial iteration report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ProxSweepError):
    """Invalid run configuration; ``problems`` lists every violation."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])
