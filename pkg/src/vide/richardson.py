"""Richardson extrapolation on nested grids and tolerance-driven stepsize selection.

The first-order grid solutions at stepsizes h, h/2, ..., h/16 are combined
into extrapolants of orders 2 to 5.  The gap between the order-3 and order-5
values estimates the leading error coefficient of the order-3 solution,

    K3_i = (Y3_i - Y5_i) / h^3,

and the stepsize for a tolerance eps is sigma * (eps / |K3_i|)^(1/3),
minimised over the nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .problem import ProblemSpec
from .solver import Grid, SolverError, Trajectory, make_grid, solve_grid

__all__ = [
    "COEFFICIENTS",
    "LEVELS",
    "RichardsonTower",
    "ToleranceReport",
    "ToleranceUnattainable",
    "build_tower",
    "extrapolate",
    "estimate_k3",
    "select_stepsize",
    "solve_tolerance",
    "error_estimate",
]

log = logging.getLogger(__name__)

LEVELS = 5

# weights of y(h), y(h/2), y(h/4), ... for the order-p extrapolant
COEFFICIENTS: dict[int, tuple[Fraction, ...]] = {
    2: (Fraction(-1), Fraction(2)),
    3: (Fraction(1, 3), Fraction(-2), Fraction(8, 3)),
    4: (Fraction(-1, 21), Fraction(2, 3), Fraction(-8, 3), Fraction(64, 21)),
    5: (
        Fraction(1, 315),
        Fraction(-2, 21),
        Fraction(8, 9),
        Fraction(-64, 21),
        Fraction(1024, 315),
    ),
}

SIGMA = 0.85
N_PILOT = 20
N_MIN = 4
N_CAP = 10**7
MAX_RERUNS = 3
K3_FLOOR = 1e-14


class ToleranceUnattainable(RuntimeError):
    def __init__(self, message: str, best_estimate: float, report: "ToleranceReport | None" = None):
        self.best_estimate = best_estimate
        self.report = report
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class RichardsonTower:
    base: Grid
    levels: tuple[Trajectory, ...]
    extrapolants: dict[int, np.ndarray] | None = None

    def coarse(self, level: int) -> np.ndarray:
        """Solution of ``level`` sampled at the coarse nodes, shape (d, N+1)."""
        return self.levels[level].y[:, :: 2**level]

    def solution(self, order: int) -> np.ndarray:
        """Order-``order`` values at the coarse nodes (1 = raw coarse trajectory)."""
        if order == 1:
            return self.coarse(0)
        if self.extrapolants is None:
            raise ValueError("tower has not been extrapolated")
        return self.extrapolants[order]


@dataclass(eq=False)
class ToleranceReport:
    epsilon: float
    mode: str
    sigma: float
    k3: np.ndarray
    h_selected: float
    N_selected: int
    error_estimate: float
    reruns: int
    N_pilot: int
    pilot_estimate: float
    tower: RichardsonTower | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "mode": self.mode,
            "sigma": self.sigma,
            "k3": self.k3.tolist(),
            "h_selected": self.h_selected,
            "N_selected": self.N_selected,
            "error_estimate": self.error_estimate,
            "reruns": self.reruns,
            "N_pilot": self.N_pilot,
            "pilot_estimate": self.pilot_estimate,
        }


def build_tower(spec: ProblemSpec, N: int) -> RichardsonTower:
    """Solve on N, 2N, 4N, 8N and 16N steps."""
    if N < 1:
        raise ValueError(f"need at least one coarse step, got N={N}")
    levels = []
    for k in range(LEVELS):
        try:
            levels.append(solve_grid(spec, N * 2**k))
        except SolverError as exc:
            exc.args = (f"level {k} (h/{2**k}): {exc.args[0]}",)
            exc.level = k
            raise
    return RichardsonTower(base=make_grid(spec.interval, N), levels=tuple(levels))


def extrapolate(tower: RichardsonTower) -> RichardsonTower:
    if len(tower.levels) < LEVELS:
        raise ValueError(f"tower needs {LEVELS} levels, has {len(tower.levels)}")
    coarse = [tower.coarse(k) for k in range(LEVELS)]
    out = {}
    for order, row in COEFFICIENTS.items():
        # the weights sum to one, so combine differences from the coarse level;
        # levels that agree then reproduce their common value exactly
        acc = np.zeros_like(coarse[0])
        for c, values in zip(row[1:], coarse[1:]):
            acc = acc + (c.numerator / c.denominator) * (values - coarse[0])
        out[order] = coarse[0] + acc
    return RichardsonTower(tower.base, tower.levels, out)


def estimate_k3(tower: RichardsonTower, componentwise: bool = False) -> np.ndarray:
    """Per-node estimate of the order-3 error coefficient.

    For systems the component of largest magnitude is reported unless
    ``componentwise`` is set, in which case the (d, N+1) array is returned.
    """
    diff = (tower.solution(3) - tower.solution(5)) / tower.base.h**3
    if componentwise:
        return diff
    idx = np.argmax(np.abs(diff), axis=0)
    return diff[idx, np.arange(diff.shape[1])]


def select_stepsize(
    k3: Sequence[float] | np.ndarray,
    epsilon: float,
    sigma: float = SIGMA,
    mode: str = "abs",
    yvals: Sequence[float] | np.ndarray | None = None,
    *,
    length: float = 1.0,
    n_min: int = N_MIN,
) -> tuple[float, int]:
    """Smallest per-node stepsize sigma*(eps*scale/|K3|)^(1/3), rounded to fit ``length``.

    ``scale`` is 1 in absolute mode and max(1, |y_i|) in relative mode.
    Nodes with |K3| below 1e-14 are ignored; when none remain the
    stepsize is ``length / n_min``.
    """
    if not epsilon > 0:
        raise ValueError(f"tolerance must be positive, got {epsilon}")
    if not 0 < sigma < 1:
        raise ValueError(f"safety factor must lie in (0, 1), got {sigma}")
    if mode not in ("abs", "rel"):
        raise ValueError(f"mode must be 'abs' or 'rel', got {mode!r}")
    k3 = np.abs(np.asarray(k3, dtype=float))
    scale = np.ones_like(k3)
    if mode == "rel":
        if yvals is None:
            raise ValueError("relative mode needs the solution values")
        scale = np.maximum(1.0, np.abs(np.broadcast_to(np.asarray(yvals, dtype=float), k3.shape)))
    h_max = length / n_min
    mask = k3 >= K3_FLOOR
    if not mask.any():
        h = h_max
    else:
        h = float(np.min(sigma * np.cbrt(epsilon * scale[mask] / k3[mask])))
        h = min(h, h_max)
    N = max(n_min, math.ceil(length / h))
    return length / N, N


def error_estimate(tower: RichardsonTower, mode: str = "abs") -> float:
    """Max-node |Y3 - Y5|, divided by max(1, |Y3|) in relative mode."""
    y3 = tower.solution(3)
    gap = np.abs(y3 - tower.solution(5))
    if mode == "rel":
        gap = gap / np.maximum(1.0, np.abs(y3))
    return float(np.max(gap))


def solve_tolerance(
    spec: ProblemSpec,
    epsilon: float,
    mode: str = "abs",
    *,
    sigma: float = SIGMA,
    n_pilot: int = N_PILOT,
    max_reruns: int | None = None,
    n_cap: int | None = None,
) -> tuple[Trajectory, ToleranceReport]:
    """Solve ``spec`` so that the order-3 solution meets ``epsilon``.

    A pilot tower on ``n_pilot`` steps yields the K3 estimates; the selected
    stepsize is then used for a fresh tower whose Y3 is returned.  If its
    |Y3 - Y5| estimate still exceeds ``epsilon`` the stepsize is halved, at
    most ``max_reruns`` times.
    """
    if not epsilon > 0:
        raise ValueError(f"tolerance must be positive, got {epsilon}")
    max_reruns = MAX_RERUNS if max_reruns is None else max_reruns
    n_cap = N_CAP if n_cap is None else n_cap
    pilot = extrapolate(build_tower(spec, n_pilot))
    k3_full = estimate_k3(pilot, componentwise=True)
    pilot_est = error_estimate(pilot, mode)
    h, N = select_stepsize(
        k3_full, epsilon, sigma, mode, pilot.solution(3), length=spec.length
    )
    if pilot_est > epsilon and N < n_pilot:
        N = n_pilot
    k3 = estimate_k3(pilot)

    def report(tower, est, reruns):
        return ToleranceReport(
            epsilon=epsilon,
            mode=mode,
            sigma=sigma,
            k3=k3,
            h_selected=tower.base.h if tower is not None else spec.length / N,
            N_selected=tower.base.N if tower is not None else N,
            error_estimate=est,
            reruns=reruns,
            N_pilot=n_pilot,
            pilot_estimate=pilot_est,
            tower=tower,
        )

    reruns = 0
    best = math.inf
    while True:
        if N * 2 ** (LEVELS - 1) > n_cap:
            raise ToleranceUnattainable(
                f"finest level would need {N * 2 ** (LEVELS - 1)} steps (cap {n_cap}); "
                f"best estimate {best:.3g} for tolerance {epsilon:g}",
                best,
                report(None, best, reruns),
            )
        tower = extrapolate(build_tower(spec, N))
        est = error_estimate(tower, mode)
        best = min(best, est)
        log.debug("N=%d estimate=%.3g (eps=%g)", N, est, epsilon)
        if est <= epsilon:
            break
        if reruns >= max_reruns:
            raise ToleranceUnattainable(
                f"estimate {est:.3g} exceeds tolerance {epsilon:g} after {reruns} reruns (N={N})",
                best,
                report(tower, est, reruns),
            )
        reruns += 1
        N *= 2
    y3 = tower.solution(3)
    solution = Trajectory(
        grid=tower.base,
        y=y3,
        aux=np.empty((0, tower.base.N + 1)),
        dy=None,
        dy0=tower.levels[0].dy0,
    )
    return solution, report(tower, est, reruns)
