"""Affine change of variable taking a first-order problem on [x0, xN] to [0, 1].

With x = m*s + x0 (m = xN - x0) the unit-interval problem has

    f~(s, y)         = m   * f(m*s + x0, y)
    K~(s, y(u), u)   = m^2 * K(m*s + x0, y(m*u + x0), m*u + x0)

and ~y(s) = y(m*s + x0), so the initial values carry over unchanged.  A
derivative argument of the kernel is rescaled as well: d~y/ds = m * dy/dx.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .problem import DYT, XT, YT, ProblemError, ProblemSpec, Separable, SystemIntegrand
from .solver import Trajectory

__all__ = ["IntervalMap", "UnsupportedTransform", "to_unit", "map_back"]


class UnsupportedTransform(ProblemError):
    pass


@dataclass(frozen=True)
class IntervalMap:
    m: float
    x0: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"scale must be positive, got {self.m}")

    def forward(self, s):
        """Unit coordinate -> physical coordinate."""
        return self.m * s + self.x0

    def inverse(self, x):
        """Physical coordinate -> unit coordinate."""
        return (x - self.x0) / self.m

    @property
    def interval(self) -> tuple[float, float]:
        return (self.x0, self.x0 + self.m)


def _wrap_f(f, m, x0):
    return lambda s, y: m * f(m * s + x0, y)


def _wrap_kernel(kernel, m, x0):
    m2 = m * m
    if isinstance(kernel, XT):
        K = kernel.K
        return XT(lambda s, u: m2 * K(m * s + x0, m * u + x0))
    if isinstance(kernel, (YT, SystemIntegrand)):
        K = kernel.K
        return type(kernel)(lambda y, u: m2 * K(y, m * u + x0))
    if isinstance(kernel, DYT):
        K = kernel.K
        return DYT(lambda y, dy, u: m2 * K(y, tuple(v / m for v in dy), m * u + x0))
    if isinstance(kernel, Separable):
        K1, K2 = kernel.K1, kernel.K2
        if kernel.uses_dy:
            k2 = lambda y, dy, u: m * K2(y, tuple(v / m for v in dy), m * u + x0)  # noqa: E731
        else:
            k2 = lambda y, dy, u: m * K2(y, dy, m * u + x0)  # noqa: E731
        return Separable(lambda s: m * K1(m * s + x0), k2, uses_dy=kernel.uses_dy)
    raise TypeError(f"unsupported kernel form {type(kernel).__name__}")


def to_unit(spec: ProblemSpec) -> tuple[ProblemSpec, IntervalMap]:
    """Pose ``spec`` on [0, 1]; returns the new spec and the coordinate map."""
    if spec.order != 1:
        raise UnsupportedTransform(
            f"interval transformation is only defined for first-order problems (got order {spec.order})"
        )
    x0, xn = spec.interval
    imap = IntervalMap(m=xn - x0, x0=x0)
    if imap.m == 1.0 and x0 == 0.0:
        return spec, imap
    m = imap.m
    exact = None
    if spec.exact is not None:
        exact = tuple((lambda e: (lambda s: e(m * s + x0)))(e) for e in spec.exact)
    unit = replace(
        spec,
        f=tuple(_wrap_f(f, m, x0) for f in spec.f),
        kernel=tuple(_wrap_kernel(k, m, x0) for k in spec.kernel),
        interval=(0.0, 1.0),
        exact=exact,
        source=None,
    )
    return unit, imap


def map_back(
    unit_solution: Trajectory, imap: IntervalMap, component: int = 0
) -> Callable[[float], float]:
    """Solution of the original problem as a function of the physical coordinate.

    Node values are returned as computed; between nodes the values are
    interpolated linearly (error of order h^2 |y''| / 8).
    """
    s_nodes = unit_solution.x
    values = np.asarray(unit_solution.y[component], dtype=float)
    lo, hi = imap.interval

    def y(x: float) -> float:
        if not lo <= x <= hi:
            raise ValueError(f"x={x!r} outside [{lo}, {hi}]")
        return float(np.interp(imap.inverse(x), s_nodes, values))

    return y
