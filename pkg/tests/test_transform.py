import numpy as np
import pytest

from vide import problem as pb
from vide import richardson as rr
from vide import solver as sv
from vide.transform import IntervalMap, UnsupportedTransform, map_back, to_unit

# y' = ((-x^5 + 10x^2 + 32) / (5x^3)) y + int_2^x t^2 y(t) / x dt,  y(2) = 4,  y = x^2
SQUARE_ON_2_5 = """\
interval = 2 5
initial = 4
f.1 = (-x^5 + 10*x^2 + 32) / (5*x^3) * y
kernel.1.form = separable
kernel.1.K1 = 1/x
kernel.1.K2 = t^2*y
exact.1 = x^2
"""

# y' = 2x - x^2 + 1 + int_1^x y'(t) dt,  y(1) = 1,  y = x^2
DERIVATIVE_KERNEL_ON_1_2 = """\
interval = 1 2
initial = 1
f.1 = 2*x - x^2 + 1
kernel.1.form = dyt
kernel.1.K = dy
exact.1 = x^2
"""


@pytest.fixture(scope="module")
def square():
    return pb.load(SQUARE_ON_2_5)


def test_interval_map():
    imap = IntervalMap(m=3.0, x0=2.0)
    assert imap.forward(0.0) == 2.0 and imap.forward(1.0) == 5.0
    assert imap.inverse(3.5) == 0.5
    assert imap.interval == (2.0, 5.0)
    with pytest.raises(ValueError):
        IntervalMap(m=0.0, x0=1.0)


def test_unit_interval_is_left_alone():
    spec = pb.builtin(7)
    unit, imap = to_unit(spec)
    assert unit is spec
    assert (imap.m, imap.x0) == (1.0, 0.0)


def test_worked_example_transformed_pieces(square):
    unit, imap = to_unit(square)
    assert imap.m == 3.0 and imap.x0 == 2.0
    assert unit.interval == (0.0, 1.0)
    assert unit.initial == (4.0,)
    for s in np.linspace(0.0, 1.0, 7):
        X = 3 * s + 2
        assert unit.exact[0](s) == pytest.approx(9 * s * s + 12 * s + 4, rel=1e-15)
        fy = unit.f[0](s, (1.0,))
        assert fy == pytest.approx(3 * (-X**5 + 10 * X**2 + 32) / (5 * X**3), rel=1e-14)
        for u in np.linspace(0.0, s, 4):
            k = unit.kernel[0]
            got = k.K1(s) * k.K2((1.0,), None, u)
            assert got == pytest.approx(9 * (3 * u + 2) ** 2 / (3 * s + 2), rel=1e-14)


def test_worked_example_round_trip(square):
    unit, imap = to_unit(square)
    sol, report = rr.solve_tolerance(unit, 1e-8)
    assert sol.y[0, 0] == 4.0
    x = imap.forward(sol.x)
    assert np.max(np.abs(sol.y[0] - x**2)) <= 1e-8


def test_map_back_values():
    grid = sv.make_grid((0.0, 1.0), 2)
    s = grid.nodes
    values = np.array([9 * s**2 + 12 * s + 4])
    traj = sv.Trajectory(grid=grid, y=values, aux=np.empty((0, 3)), dy=None, dy0=(12.0,))
    y = map_back(traj, IntervalMap(m=3.0, x0=2.0))
    assert y(5.0) == 25.0
    assert y(3.5) == 12.25
    assert y(2.0) == 4.0
    with pytest.raises(ValueError):
        y(5.5)
    with pytest.raises(ValueError):
        y(1.9)


def _commutes(spec, eps):
    unit, imap = to_unit(spec)
    sol_u, rep_u = rr.solve_tolerance(unit, eps)
    N = rep_u.N_selected
    direct = rr.extrapolate(rr.build_tower(spec, N))
    est_d = rr.error_estimate(direct)
    np.testing.assert_allclose(imap.forward(sol_u.x), direct.base.nodes, rtol=1e-14)
    gap = np.max(np.abs(sol_u.y - direct.solution(3)))
    assert gap <= 5 * max(rep_u.error_estimate, est_d)


def test_commutation_worked_example(square):
    _commutes(square, 1e-8)


def test_commutation_example_7_on_1_3():
    _commutes(pb.with_interval(pb.builtin(7), 1.0, 3.0), 1e-8)


def test_constant_slope_is_reproduced_exactly():
    spec = pb.load("interval = 2 5\ninitial = 1\nf.1 = 0.5\nkernel.1.form = yt\nkernel.1.K = 0\n")
    unit, imap = to_unit(spec)
    N = 8
    a = sv.solve_grid(unit, N)
    b = sv.solve_grid(spec, N)
    assert a.y.tolist() == b.y.tolist()
    assert a.y[0].tolist() == (1.0 + 0.5 * (b.x - 2.0)).tolist()


def test_higher_order_is_rejected():
    with pytest.raises(UnsupportedTransform, match="first-order"):
        to_unit(pb.with_interval(pb.builtin(10), 0.0, 2.0))


def test_derivative_kernels_are_rescaled():
    spec = pb.load(DERIVATIVE_KERNEL_ON_1_2.replace("interval = 1 2", "interval = 1 4"))
    unit, imap = to_unit(spec)
    K, Ku = spec.kernel[0].K, unit.kernel[0].K
    # dy~/ds = m dy/dx, so a unit-interval derivative of 6 is a physical one of 2
    assert Ku((0.0,), (6.0,), 0.5) == 9.0 * K((0.0,), (2.0,), 2.5)


def test_derivative_kernel_round_trip():
    spec = pb.load(DERIVATIVE_KERNEL_ON_1_2)
    unit, imap = to_unit(spec)
    sol, _ = rr.solve_tolerance(unit, 1e-8)
    assert np.max(np.abs(sol.y[0] - imap.forward(sol.x) ** 2)) <= 1e-8
