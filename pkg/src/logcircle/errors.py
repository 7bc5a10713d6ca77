"""Exception hierarchy shared by every module of the lab."""

from __future__ import annotations


class LabError(Exception):
    """Base class for all lab failures."""


class SingularProximity(LabError):
    """The requested point is too close to a zero of the profile function."""


class NoZeros(LabError):
    """The profile function has no sign change on the circle."""


class NonMorse(LabError):
    """A root of the profile function or of its derivative is degenerate."""


class UnresolvedRoot(LabError):
    """Bracketed refinement failed to certify a root."""


class UnboundedRatio(LabError):
    """No derivative-bound constant below the cap satisfies the inequalities."""


class UndefinedAtStep(LabError):
    """An orbit point sits on the critical or singular set, so d_i vanishes."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class OrbitHitsSet(LabError):
    """A sampled orbit met the critical or singular set."""


class CriticalOrbitTruncated(LabError):
    """The orbit of a critical value entered the singular exclusion radius."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class OutOfBindingRange(LabError):
    """Point lies outside the computed binding-interval family."""

    def __init__(self, message: str, time: int | None = None):
        super().__init__(message)
        self.time = time


class NotAFreeReturn(LabError):
    """The requested time is not a recorded free return."""


class UnresolvableCut(LabError):
    """A cut width is undefined because an endpoint orbit hit a marked point."""


class BudgetExceeded(LabError):
    """A construction ran out of budget; the partial result is attached."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class GrowthFailed(LabError):
    """No good pair could be certified within the allowed number of steps."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class InsufficientData(LabError):
    """Too few samples survived to form an estimate."""


class NonConvergence(LabError):
    """An iterative solver did not reach its residual target."""


class DivergentIntegral(LabError):
    """Adaptive quadrature failed to stabilise."""


class NoiseDominated(LabError):
    """Too few correlation values rise above the sampling noise floor."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class NegativeVarianceEstimate(LabError):
    """Truncated Green-Kubo sum came out negative."""


class EmptyBall(LabError):
    """Estimated measure of a dynamical ball is below resolution."""


class ConfigError(LabError):
    """The experiment configuration failed validation."""
