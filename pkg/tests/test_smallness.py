import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucprop.constants import ConstantsProfile
from ucprop.dyadic import CubeFamily, DyadicCube, Root
from ucprop.errors import PreconditionError
from ucprop.experiments import scaled_instance
from ucprop.geometry import Grid, RegionMask, box_domain, inner_region
from ucprop.smallness import (
    GoodnessLedger,
    cube_mass,
    find_small_ball,
    good_test,
    lattice_cube,
    log_envelope,
    loglog_bound,
    phi_estimate,
    propagate_goodness,
    select_initial_family,
)
from ucprop.solver import SolutionField


def centered_grid(dim=3, side_nodes=32):
    h = 1.0 / side_nodes
    return Grid(dim, h, (side_nodes,) * dim, (-0.5 + h / 2,) * dim)


def test_linear_field_goodness():
    grid = centered_grid()
    cube = lattice_cube(grid, (0, 0, 0), 32)
    assert cube.center == pytest.approx((0, 0, 0))
    assert cube.side == pytest.approx(1.0)
    u = SolutionField.from_function(grid, lambda a, b, c: a + 0 * b + 0 * c)
    mass, meas = cube_mass(u, cube)
    assert meas == pytest.approx(1.0)
    assert mass == pytest.approx(1 / 12 - grid.h**2 / 12)
    assert good_test(u, cube, 1 / 12)
    assert not good_test(u, cube, 1 / 13)


def test_goodness_levels_without_field():
    root = Root((0.5, 0.5), 1.0)
    ledger = GoodnessLedger(DyadicCube(root), 2.0, 0.5, 0.1)
    res = propagate_goodness(ledger, CubeFamily(root, frozenset({(1,)})))
    assert res.N == 1
    assert res.certified == pytest.approx(8 * 0.01)
    assert ledger.levels[(1,)] == pytest.approx(2 * 0.01)
    assert ledger.levels[()] == pytest.approx(8 * 0.01)
    assert res.measured is None and res.dominates


def test_goodness_with_constant_field():
    grid = Grid.cube(2, 64, 0.0, 63 / 64)
    root = lattice_cube(grid, (0, 0), 64)
    eps = 0.1
    u = SolutionField(grid, np.full(grid.shape, eps), 0.0)
    ledger = GoodnessLedger(root, 2.0, 0.5, eps)
    res = propagate_goodness(ledger, CubeFamily(root.root, frozenset({(1, 2), (3,)})), u)
    assert res.violations == []
    assert res.dominates
    assert res.measured == pytest.approx(eps**2 * cube_mass(u, root)[1])


def test_envelopes():
    p = ConstantsProfile(H0=1.0, sigma=0.25)
    assert log_envelope(math.exp(-16), p) == pytest.approx(16 ** (-0.1))
    assert log_envelope(1.0, p) == math.inf
    assert loglog_bound(math.exp(-10), 1.0, 1.0) == pytest.approx(0.1)
    with pytest.raises(PreconditionError):
        loglog_bound(1.0, 1.0, 1.0)


@settings(max_examples=30)
@given(st.floats(1e-300, 0.5), st.floats(1e-300, 0.5))
def test_envelope_monotone(a, b):
    p = ConstantsProfile()
    lo, hi = sorted((a, b))
    assert log_envelope(lo, p) <= log_envelope(hi, p)


@pytest.fixture(scope="module")
def plane():
    grid = Grid.cube(2, 145, -1, 1)
    rho = 17 * grid.h
    u = SolutionField.from_function(grid, lambda a, b: a**2 - b**2 + 0.5)
    E = inner_region(box_domain(grid), rho)
    return grid, rho, u, E, ConstantsProfile(dim=2, kappa=0.249)


def test_small_ball_trivial_regime(plane):
    grid, rho, u, E, p = plane
    v = scaled_instance(u, E, 0.5 * math.sqrt(E.measure))
    ball = find_small_ball(v, E, rho, 0.5, p)
    assert ball.regime == "trivial"
    assert ball.dominates


def test_small_ball_doubling_branch(plane):
    grid, rho, u, E, p = plane
    eps = 1e-6
    v = scaled_instance(u, E, eps * math.sqrt(E.measure))
    ball = find_small_ball(v, E, rho, eps, p)
    assert ball.branch == "doubling"
    assert ball.radius == pytest.approx(2 * p.kappa * rho)
    assert ball.C >= p.C0 * abs(math.log(eps)) ** p.sigma
    assert ball.dominates


def test_small_ball_preconditions(plane):
    grid, rho, u, E, p = plane
    with pytest.raises(PreconditionError):
        find_small_ball(u.scaled(10.0), E, rho, 1e-3, p)
    v = scaled_instance(u, E, 1e-3 * math.sqrt(E.measure))
    with pytest.raises(PreconditionError):
        find_small_ball(v, E, rho, 1e-4, p)
    with pytest.raises(PreconditionError):
        find_small_ball(v, RegionMask(grid, np.zeros(grid.shape, dtype=bool)), rho, 1e-3, p)


def test_initial_family_on_constant(plane):
    grid, rho, _, E, p = plane
    eps = 0.1
    u = SolutionField(grid, np.full(grid.shape, eps), 0.0)
    init = select_initial_family(u, E, rho, eps, p, C=4.0)
    assert init.chebyshev_ok
    assert init.family.is_full()
    assert init.violations == []
    assert init.beta == pytest.approx(1 - p.k * 4.0**-2)


@pytest.mark.parametrize("eps", [1e-2, 1e-6])
def test_phi_dominates(plane, eps):
    grid, rho, u, E, p = plane
    v = scaled_instance(u, E, eps)
    rep = phi_estimate(v, E, rho, eps, p, ratio=2.1, slack=1.005)
    assert rep.step_violations == 0
    assert rep.dominates
    assert rep.measured <= eps * (1 + 1e-9)
    assert 0 < rep.exponent < p.sigma / p.H1


def test_phi_requires_small_data(plane):
    grid, rho, u, E, p = plane
    with pytest.raises(PreconditionError):
        phi_estimate(scaled_instance(u, E, 1e-2), E, rho, 1e-3, p)


def test_three_step_ledger():
    root = Root((0.5, 0.5), 1.0)
    ledger = GoodnessLedger(DyadicCube(root), 2.0, 0.5, 0.1)
    res = propagate_goodness(ledger, CubeFamily(root, frozenset({(1, 1, 1)})))
    assert res.N == 3
    assert res.certified == pytest.approx(2.0**7 * 0.01)


def half_of_omega(plane):
    grid, rho, _, E, _ = plane
    x1 = grid.mesh()[0]
    return RegionMask(grid, E.mask & (x1 < 0))


def test_small_ball_dyadic_branch(plane):
    grid, rho, _, _, p = plane
    E = half_of_omega(plane)
    eps = 1e-3
    u = SolutionField(grid, np.full(grid.shape, 0.5 * eps), 0.0)
    ball = find_small_ball(u, E, rho, eps, p, C=1.0)
    assert ball.branch == "dyadic"
    assert ball.details["goodness_violations"] == 0
    assert ball.dominates
    assert ball.radius <= p.kappa * rho / 2


def test_chebyshev_half_survives(plane):
    grid, rho, _, _, p = plane
    E = half_of_omega(plane)
    eps = 1e-3
    vals = np.full(grid.shape, 0.3 * eps)
    pts = np.argwhere(E.mask)
    big = pts[: int(0.2 * len(pts))]
    vals[tuple(big.T)] = 1.5 * eps
    u = SolutionField(grid, vals, 0.0)
    init = select_initial_family(u, E, rho, eps, p, C=1.0)
    assert init.chebyshev_ok
    assert 2 * init.E1.count >= E.count
    assert len(init.family) > 0


def test_doubling_branch_below_envelope(plane):
    grid, rho, u, E, p = plane
    for eps in (1e-2, 1e-4, 1e-8, 1e-12):
        v = scaled_instance(u, E, eps * math.sqrt(E.measure))
        ball = find_small_ball(v, E, rho, eps, p)
        assert ball.branch == "doubling"
        assert ball.certified <= ball.envelope * (1 + 1e-12)
