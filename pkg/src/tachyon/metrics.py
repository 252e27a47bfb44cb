"""Safe-failure-fraction and fitness metrics for the drive case study.

SFF = (lambda_S + lambda_DD) / (lambda_S + lambda_DD + lambda_DU): the
fraction of failures that are safe or detected.  Diagnostic coverage (the
fraction of dangerous failures detected) equals SFF when lambda_S is zero,
which is the setting of the bundled model (safe failures are kept as an
accounting slot only).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .diagnostics import TachyonError


@dataclass(frozen=True)
class FailureCounts:
    lambda_s: int = 0     # detected safe failures
    lambda_dd: int = 0    # detected dangerous failures
    lambda_du: int = 0    # undetected dangerous failures

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_dd, self.lambda_du) < 0:
            raise TachyonError("failure counts must be non-negative")

    @property
    def total(self) -> int:
        return self.lambda_s + self.lambda_dd + self.lambda_du


def sff(c: FailureCounts, exact: bool = False) -> float | Fraction:
    """Safe failure fraction as a float (or exact rational)."""
    if c.total == 0:
        raise TachyonError("no failures recorded")
    num = c.lambda_s + c.lambda_dd
    if exact:
        return Fraction(num, c.total)
    return num / c.total


def diagnostic_coverage(c: FailureCounts, exact: bool = False):
    """Fraction of dangerous failures detected; equals sff() when
    lambda_S == 0."""
    dangerous = c.lambda_dd + c.lambda_du
    if dangerous == 0:
        raise TachyonError("no dangerous failures recorded")
    if exact:
        return Fraction(c.lambda_dd, dangerous)
    return c.lambda_dd / dangerous


def fitness_increment(sff_now: float, sff_target: float, dt: float) -> float:
    """|SFF(t) - SFF_target| * dt: one piecewise-constant slice of the
    fitness integral.  The bundled model accumulates this per diagnostic
    cycle, so the summed increments equal the integral exactly."""
    if dt < 0:
        raise TachyonError("dt must be non-negative")
    return abs(sff_now - sff_target) * dt


def integrate_step_function(points: list[tuple[float, float]],
                            target: float, t_end: float) -> float:
    """Reference quadrature of the fitness integral over a piecewise-
    constant SFF trace given as (time, sff) steps, from the first point's
    time to t_end."""
    if not points:
        return 0.0
    total = 0.0
    for (t0, v), (t1, _) in zip(points, points[1:]):
        total += fitness_increment(v, target, t1 - t0)
    t_last, v_last = points[-1]
    if t_end > t_last:
        total += fitness_increment(v_last, target, t_end - t_last)
    return total
