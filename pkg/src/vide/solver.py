"""Explicit Euler stepping with composite trapezium quadrature of the memory term.

For a first-order equation the update is

    y[i+1] = y[i] + h*f(x[i], y[i]) + h*I[i],
    I[i]   = (h/2) * (2*sum_{j=0..i} K[j] - K[0] - K[i]),   I[0] = 0,

where ``K[j]`` is the kernel sampled at node ``j``.  Orders two and three are
reduced to first-order systems ``y' = w``, ``w' = z`` with the memory term
only in the highest-derivative row.  Derivatives inside kernels use the
backward difference ``(y[j] - y[j-1])/h``; at ``j = 0`` the right-hand side
``f(x0, y0)`` (first order) or the given ``w0`` (higher order) is used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .problem import DYT, XT, YT, ProblemSpec, Separable, SystemIntegrand, KernelForm

__all__ = [
    "Grid",
    "Trajectory",
    "QuadratureState",
    "SolverError",
    "EvaluatorDomainError",
    "NonFiniteError",
    "make_grid",
    "solve_grid",
    "kernel_integral",
    "discrete_derivative",
    "trapezium",
]

log = logging.getLogger(__name__)


class SolverError(ArithmeticError):
    """A step could not be completed."""

    def __init__(self, message: str, node: int, evaluator: str | None = None):
        self.node = node
        self.evaluator = evaluator
        super().__init__(message)


class EvaluatorDomainError(SolverError):
    pass


class NonFiniteError(SolverError):
    pass


@dataclass(frozen=True)
class Grid:
    x0: float
    h: float
    N: int

    @property
    def nodes(self) -> np.ndarray:
        return self.x0 + np.arange(self.N + 1) * self.h

    def node(self, i: int) -> float:
        return self.x0 + i * self.h

    @property
    def end(self) -> float:
        return self.x0 + self.N * self.h


def make_grid(interval: Sequence[float], N: int) -> Grid:
    if N < 1:
        raise ValueError(f"need at least one step, got N={N}")
    x0, xn = float(interval[0]), float(interval[1])
    if not x0 < xn:
        raise ValueError(f"empty interval [{x0}, {xn}]")
    return Grid(x0, (xn - x0) / N, int(N))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node values of one grid solve.

    ``y`` has shape (d, N+1); ``aux`` holds the w (then z) rows of a reduced
    higher-order equation, shape ((n-1)*d, N+1).  ``dy`` holds the discrete
    derivatives when a kernel needs them.  ``integrals`` (optional) is the
    quadrature value used in each step, shape (d, N+1), last column unused.
    """

    grid: Grid
    y: np.ndarray
    aux: np.ndarray
    dy: np.ndarray | None
    dy0: tuple[float, ...]
    integrals: np.ndarray | None = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes


class QuadratureState:
    """Running composite trapezium sum over kernel samples K[0], K[1], ...

    The sum is accumulated with Neumaier compensation.
    """

    __slots__ = ("s", "c", "first", "last", "count")

    def __init__(self) -> None:
        self.s = 0.0
        self.c = 0.0
        self.first = 0.0
        self.last = 0.0
        self.count = 0

    def push(self, k: float) -> None:
        s = self.s
        t = s + k
        if abs(s) >= abs(k):
            self.c += (s - t) + k
        else:
            self.c += (k - t) + s
        self.s = t
        if self.count == 0:
            self.first = k
        self.last = k
        self.count += 1

    def integral(self, h: float) -> float:
        """Trapezium value over the samples pushed so far (0 for a single sample)."""
        if self.count < 2:
            return 0.0
        return 0.5 * h * ((2.0 * self.s - self.first - self.last) + 2.0 * self.c)


def trapezium(values: Sequence[float], h: float) -> float:
    """Composite trapezium rule over equispaced samples, summed from scratch."""
    if len(values) < 2:
        return 0.0
    return 0.5 * h * (2.0 * math.fsum(values) - values[0] - values[-1])


def kernel_integral(
    state: QuadratureState | None,
    kernel: KernelForm,
    grid: Grid,
    i: int,
    y: Sequence[float],
    dy: Sequence[float] | None,
) -> float:
    """Trapezium approximation of the memory integral over [x0, x_i].

    For kernels without outer-``x`` dependence the node-``i`` sample is pushed
    into ``state`` (O(1) per node).  Generic ``XT`` kernels are re-summed over
    all nodes with the outer argument frozen at ``x_i`` (O(i) per node).
    """
    t = grid.x0 + i * grid.h
    if isinstance(kernel, (YT, SystemIntegrand)):
        state.push(kernel.K(y, t))
        return state.integral(grid.h)
    if isinstance(kernel, Separable):
        state.push(kernel.K2(y, dy, t))
        if i == 0:
            return 0.0
        return kernel.K1(t) * state.integral(grid.h)
    if isinstance(kernel, DYT):
        state.push(kernel.K(y, dy, t))
        return state.integral(grid.h)
    if isinstance(kernel, XT):
        if i == 0:
            return 0.0
        x0, h, K = grid.x0, grid.h, kernel.K
        return trapezium([K(t, x0 + j * h) for j in range(i + 1)], h)
    raise TypeError(f"unsupported kernel form {type(kernel).__name__}")


def discrete_derivative(traj: Trajectory, j: int, component: int = 0) -> float:
    """Backward difference of the solution at node ``j`` (the start value at ``j = 0``)."""
    if not 0 <= j <= traj.grid.N:
        raise IndexError(f"node {j} outside 0..{traj.grid.N}")
    if j == 0:
        return traj.dy0[component]
    y = traj.y[component]
    return (y[j] - y[j - 1]) / traj.grid.h


def _role(kernel: KernelForm, k: int) -> str:
    # name of the evaluator(s) that can fail inside kernel_integral
    if isinstance(kernel, Separable):
        return f"kernel.{k}.K1/K2"
    return f"kernel.{k}.K"


def solve_grid(
    spec: ProblemSpec,
    N: int,
    *,
    compensated: bool = True,
    record_integrals: bool = False,
) -> Trajectory:
    """Solve ``spec`` on an equispaced grid of ``N`` steps.

    With ``compensated`` the solution rows are accumulated with Neumaier
    compensation; without it the updates are plain ``y += h*(...)``.
    """
    grid = make_grid(spec.interval, N)
    x0, h = grid.x0, grid.h
    n, d = spec.order, spec.dim
    init = [float(a) for a in spec.initial]
    kernels = spec.kernel
    fs = spec.f
    needs_dy = spec.needs_dy
    for k, kern in enumerate(kernels):
        if isinstance(kern, XT):
            log.info(
                "kernel.%d depends on x: each step re-sums all earlier nodes (O(N^2), N=%d)",
                k + 1,
                N,
            )

    # rows: y_1..y_d, then w (n >= 2), then z (n == 3); row `top` carries the memory term
    nrows = n * d
    rows = [[init[r]] + [0.0] * N for r in range(nrows)]
    comp = [0.0] * nrows
    acc = list(init)
    top = nrows - d

    dy_rows = [[0.0] * (N + 1) for _ in range(d)] if needs_dy else None
    integ = [[0.0] * (N + 1) for _ in range(d)] if record_integrals else None
    states = [QuadratureState() for _ in range(d)]

    y0 = tuple(init[:d])
    if n == 1:
        try:
            dy0 = tuple(fs[k](x0, y0) for k in range(d))
        except (ArithmeticError, ValueError) as exc:
            raise EvaluatorDomainError(f"node 0: f: {exc}", 0, "f") from exc
    else:
        dy0 = tuple(init[d:2 * d])
    if dy_rows is not None:
        for k in range(d):
            dy_rows[k][0] = dy0[k]

    isfinite = math.isfinite
    kroles = [_role(kernels[k], k + 1) for k in range(d)]
    froles = [f"f.{k + 1}" for k in range(d)]
    incr = [0.0] * nrows
    dy: tuple[float, ...] | None = dy0 if needs_dy else None
    for i in range(N):
        x = x0 + i * h
        y = tuple(rows[k][i] for k in range(d)) if d > 1 else (rows[0][i],)
        if needs_dy and i > 0:
            dy = tuple((rows[k][i] - rows[k][i - 1]) / h for k in range(d))
            for k in range(d):
                dy_rows[k][i] = dy[k]
        role = "f"
        try:
            for k in range(d):
                role = kroles[k]
                I = kernel_integral(states[k], kernels[k], grid, i, y, dy)
                if integ is not None:
                    integ[k][i] = I
                role = froles[k]
                fx = dy0[k] if (i == 0 and n == 1) else fs[k](x, y)
                incr[top + k] = h * fx + h * I
        except (ArithmeticError, ValueError) as exc:
            raise EvaluatorDomainError(
                f"node {i} (x={x!r}): {role}: {exc}", i, role
            ) from exc
        # lower rows of a reduced system: y' = w, w' = z
        for r in range(top):
            incr[r] = h * rows[r + d][i]

        for r in range(nrows):
            v = incr[r]
            if compensated:
                s = acc[r]
                t = s + v
                if abs(s) >= abs(v):
                    comp[r] += (s - t) + v
                else:
                    comp[r] += (v - t) + s
                acc[r] = t
                out = t + comp[r]
            else:
                out = rows[r][i] + v
            if not isfinite(out):
                raise NonFiniteError(
                    f"node {i + 1} (x={x + h!r}): non-finite solution value {out!r}", i + 1
                )
            rows[r][i + 1] = out

    if dy_rows is not None and N >= 1:
        for k in range(d):
            dy_rows[k][N] = (rows[k][N] - rows[k][N - 1]) / h

    arr = np.array(rows, dtype=float).reshape(nrows, N + 1)
    return Trajectory(
        grid=grid,
        y=arr[:d],
        aux=arr[d:],
        dy=np.array(dy_rows, dtype=float) if dy_rows is not None else None,
        dy0=dy0,
        integrals=np.array(integ, dtype=float) if integ is not None else None,
    )
