from fractions import Fraction

import numpy as np
import pytest

from vide import problem as pb
from vide import richardson as rr
from vide.problem import ProblemSpec
from vide.solver import Trajectory, make_grid


def fake_tower(values_at_h, N=4, h0=0.1):
    """Tower whose level-k coarse values are ``values_at_h(h0 / 2**k, x)``."""
    base = make_grid((0.0, N * h0), N)
    levels = []
    for k in range(rr.LEVELS):
        grid = make_grid((0.0, N * h0), N * 2**k)
        y = np.array([[values_at_h(grid.h, x) for x in grid.nodes]])
        levels.append(Trajectory(grid=grid, y=y, aux=np.empty((0, grid.N + 1)), dy=None, dy0=(0.0,)))
    return rr.RichardsonTower(base=base, levels=tuple(levels))


# --------------------------------------------------------------------------- coefficients


@pytest.mark.parametrize("order", sorted(rr.COEFFICIENTS))
def test_coefficients_are_consistent_and_annihilate_low_powers(order):
    row = rr.COEFFICIENTS[order]
    assert len(row) == order
    assert all(isinstance(c, Fraction) for c in row)
    assert sum(row) == 1
    for p in range(1, order):
        assert sum(c * Fraction(1, 2**k) ** p for k, c in enumerate(row)) == 0
    # first surviving power is h^order
    assert sum(c * Fraction(1, 2**k) ** order for k, c in enumerate(row)) != 0


def test_coefficients_follow_the_recursive_elimination():
    prev = {1: (Fraction(1),)}
    for p in range(2, 6):
        lo = prev[p - 1]
        w = Fraction(2 ** (p - 1))
        # Y_p(h) = (2^(p-1) Y_{p-1}(h/2) - Y_{p-1}(h)) / (2^(p-1) - 1)
        row = [Fraction(0)] * p
        for k, c in enumerate(lo):
            row[k] -= c / (w - 1)
            row[k + 1] += w * c / (w - 1)
        prev[p] = tuple(row)
        assert prev[p] == rr.COEFFICIENTS[p]


# --------------------------------------------------------------------------- extrapolation


@pytest.mark.parametrize("order", [2, 3, 4, 5])
def test_extrapolant_is_exact_for_error_polynomials_below_its_order(order):
    coeffs = [0.3, -1.7, 2.2, 0.9][: order - 1]

    def value(h, x):
        return np.exp(x) + sum(c * (1 + x) * h ** (j + 1) for j, c in enumerate(coeffs))

    tower = rr.extrapolate(fake_tower(value))
    np.testing.assert_allclose(
        tower.solution(order)[0], np.exp(tower.base.nodes), rtol=0, atol=1e-13
    )


def test_order_one_is_the_coarse_solution():
    tower = rr.extrapolate(fake_tower(lambda h, x: x + h))
    np.testing.assert_allclose(tower.solution(1)[0], tower.base.nodes + 0.1, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        fake_tower(lambda h, x: x).solution(3)


def test_k3_matches_the_cubic_error_term():
    c3 = 2.5
    tower = rr.extrapolate(fake_tower(lambda h, x: 1.0 + c3 * x * h**3))
    k3 = rr.estimate_k3(tower)
    # Y3 keeps c3*x*h^3 times the order-3 weight sum, Y5 removes it entirely
    weight = float(sum(c * Fraction(1, 8**k) for k, c in enumerate(rr.COEFFICIENTS[3])))
    np.testing.assert_allclose(k3, weight * c3 * tower.base.nodes, rtol=1e-9, atol=1e-9)
    assert abs(k3[0]) < 1e-9


def test_k3_example_value():
    base = make_grid((0.0, 1.0), 10)
    y5 = np.array([[1.0] * 11])
    y3 = y5 + np.array([[0.0] + [8e-6] * 10])
    tower = rr.RichardsonTower(base=base, levels=(), extrapolants={3: y3, 5: y5})
    k3 = rr.estimate_k3(tower)
    assert k3[0] == 0.0
    np.testing.assert_allclose(k3[1:], 8e-3, rtol=1e-12)


def test_k3_picks_largest_component():
    base = make_grid((0.0, 1.0), 2)
    y5 = np.zeros((2, 3))
    y3 = np.array([[0.0, 1.0, -3.0], [0.0, -2.0, 1.0]])
    tower = rr.RichardsonTower(base=base, levels=(), extrapolants={3: y3, 5: y5})
    assert rr.estimate_k3(tower).tolist() == [0.0, -16.0, -24.0]
    assert rr.estimate_k3(tower, componentwise=True).shape == (2, 3)


# --------------------------------------------------------------------------- stepsize selection


def test_select_stepsize_absolute():
    h, N = rr.select_stepsize([0.0, 1.0, 0.5], 1e-6)
    assert N == 118
    assert h == 1.0 / 118


def test_select_stepsize_relative():
    h, N = rr.select_stepsize([1.0], 1e-3, mode="rel", yvals=[0.5])
    assert N == 12  # raw stepsize 0.085
    h, N = rr.select_stepsize([1.0], 1e-3, mode="rel", yvals=[-8.0])
    assert N == 6  # scale 8 doubles the raw stepsize to 0.17


def test_select_stepsize_ignores_tiny_k3():
    assert rr.select_stepsize([0.0, 1e-15, -1e-16], 1e-12) == (0.25, 4)
    h, N = rr.select_stepsize([0.0], 1e-6, length=3.0)
    assert N == 4 and h == 0.75


def test_select_stepsize_rejects_bad_arguments():
    with pytest.raises(ValueError):
        rr.select_stepsize([1.0], 0.0)
    with pytest.raises(ValueError):
        rr.select_stepsize([1.0], 1e-6, sigma=1.5)
    with pytest.raises(ValueError):
        rr.select_stepsize([1.0], 1e-6, mode="weird")
    with pytest.raises(ValueError):
        rr.select_stepsize([1.0], 1e-6, mode="rel")


# --------------------------------------------------------------------------- tolerance driver


def test_build_tower_needs_a_step():
    with pytest.raises(ValueError):
        rr.build_tower(pb.builtin(7), 0)


def test_build_tower_levels():
    tower = rr.build_tower(pb.builtin(7), 3)
    assert [t.grid.N for t in tower.levels] == [3, 6, 12, 24, 48]
    for k in range(rr.LEVELS):
        assert tower.coarse(k).shape == (1, 4)


@pytest.mark.parametrize("eps, expected", [(1e-6, 26), (1e-12, 2545)])
def test_solve_tolerance_example_7(eps, expected):
    sol, report = rr.solve_tolerance(pb.builtin(7), eps)
    assert report.N_selected == expected
    assert report.reruns == 0
    assert report.error_estimate <= eps
    assert np.max(np.abs(sol.y[0] - sol.x**3)) <= eps


def test_linear_solution_needs_minimum_grid():
    spec = ProblemSpec(
        order=1, dim=1, f=(lambda x, y: 1.0,), kernel=(pb.zero_kernel(),),
        interval=(0.0, 1.0), initial=(0.0,),
    )
    sol, report = rr.solve_tolerance(spec, 1e-10)
    assert report.N_selected == 4
    assert np.max(np.abs(sol.y[0] - sol.x)) < 1e-15


def test_node_count_grows_as_tolerance_shrinks():
    spec = pb.builtin(9)
    counts = [rr.solve_tolerance(spec, eps)[1].N_selected for eps in (1e-6, 1e-9, 1e-12)]
    assert counts == sorted(counts)
    # stepsize scales with eps^(1/3): three decades of tolerance give a factor of ten
    assert 9 <= counts[1] / counts[0] <= 11
    assert 9 <= counts[2] / counts[1] <= 11


def test_solve_tolerance_is_deterministic():
    a, ra = rr.solve_tolerance(pb.builtin(13), 1e-9)
    b, rb = rr.solve_tolerance(pb.builtin(13), 1e-9)
    assert a.y.tobytes() == b.y.tobytes()
    assert ra.as_dict() == rb.as_dict()


def test_relative_mode_meets_relative_tolerance():
    spec = pb.builtin(8)
    sol, report = rr.solve_tolerance(spec, 1e-9, mode="rel")
    exact = np.exp(sol.x)
    assert np.max(np.abs(sol.y[0] - exact) / np.maximum(1.0, exact)) <= 1e-9
    assert report.mode == "rel"


def test_cap_raises_with_best_estimate():
    with pytest.raises(rr.ToleranceUnattainable) as info:
        rr.solve_tolerance(pb.builtin(7), 1e-12, n_cap=1000)
    assert info.value.best_estimate > 1e-12
    assert info.value.report is not None


def test_exhausted_reruns_report_the_last_estimate():
    with pytest.raises(rr.ToleranceUnattainable) as info:
        rr.solve_tolerance(pb.builtin(3), 1e-12, sigma=0.99, n_pilot=4, max_reruns=0)
    rep = info.value.report
    assert rep.reruns == 0 and rep.error_estimate > 1e-12
    assert info.value.best_estimate == rep.error_estimate
