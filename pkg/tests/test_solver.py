import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucprop.errors import ConstructionError, PreconditionError
from ucprop.geometry import Grid, ball_region, box_domain
from ucprop.solver import (
    CoefficientRecipe,
    SingularTerm,
    SolutionEnsemble,
    SolutionField,
    assemble,
    build_coefficients,
    laplacian_recipe,
    lp_norm,
    manufactured_convergence,
    rescale_solution,
    residual_norm,
    solve_dirichlet,
)


def test_laplacian_constants():
    c = build_coefficients(laplacian_recipe(), Grid.cube(3, 9, -1, 1))
    assert c.lam == 1.0
    assert c.Lambda0 == 0.0
    assert all(v == 0.0 for v in c.norms.values())


def test_variable_metric_ellipticity():
    grid = Grid.cube(2, 401, -2, 2)
    c = build_coefficients(CoefficientRecipe(g="1 + 0.3*sin(x1)"), grid)
    assert c.lam == pytest.approx(0.7, abs=1e-4)
    assert c.Lambda0 == pytest.approx(0.3, abs=1e-3)


def test_singular_potential_norm_converges():
    rec = CoefficientRecipe(singular=(SingularTerm("V", 1.0, 1.5, (0.0, 0.0, 0.0)),))
    exact = (4 * math.pi * 0.5**0.75 / 0.75) ** (2 / 3)
    errs = []
    for n in (33, 65, 129):
        grid = Grid.cube(3, n, -1, 1)
        c = build_coefficients(rec, grid)
        errs.append(abs(lp_norm(c.V, ball_region(grid, (0, 0, 0), 0.5), 1.5) / exact - 1))
    assert errs[0] > errs[1] > errs[2]
    order = math.log(errs[1] / errs[2]) / math.log(2)
    assert 0.5 < order < 1.0


def test_singular_term_validation():
    with pytest.raises(ConstructionError):
        SingularTerm("V", 1.0, 2.0, (0, 0))
    with pytest.raises(ConstructionError):
        SingularTerm("W1", 1.0, 0.5, (0, 0))
    with pytest.raises(ConstructionError):
        SingularTerm("X", 1.0, 0.5, (0, 0))
    with pytest.raises(ConstructionError):
        build_coefficients(CoefficientRecipe(g="x1"), Grid.cube(2, 9, -1, 1))


def test_laplacian_rows_sum_to_zero():
    grid = Grid.cube(3, 9, -1, 1)
    system = assemble(build_coefficients(laplacian_recipe(), grid))
    assert np.abs(system.apply(np.ones(grid.shape))).max() < 1e-10


def test_first_order_term_on_linear_field():
    grid = Grid.cube(2, 17, -1, 1)
    c = build_coefficients(CoefficientRecipe(W1=("0.5 + x2", "0")), grid)
    x1, x2 = grid.coords()
    out = assemble(c).apply(np.broadcast_to(x1, grid.shape).copy())
    w = np.broadcast_to(0.5 + x2, grid.shape)[1:-1, 1:-1]
    assert np.allclose(out, -w, atol=1e-10)


def test_symmetric_without_drift():
    grid = Grid.cube(2, 9, -1, 1)
    c = build_coefficients(CoefficientRecipe(g="1 + 0.2*x1**2", V="1 + x2**2"), grid)
    a, _ = assemble(c).matrix()
    assert abs(a - a.T).max() < 1e-12


def test_linear_boundary_reproduced():
    grid = Grid.cube(3, 9, -1, 1)
    c = build_coefficients(laplacian_recipe(), grid)
    sol = solve_dirichlet(c, lambda x1, x2, x3: x1 + 2 * x2 - x3)
    x1, x2, x3 = grid.coords()
    assert np.abs(sol.u - (x1 + 2 * x2 - x3)).max() < 1e-9


def test_harmonic_cubic_in_plane():
    fn = lambda x1, x2: x1**3 - 3 * x1 * x2**2
    for n in (17, 33):
        grid = Grid.cube(2, n, -1, 1)
        sol = solve_dirichlet(build_coefficients(laplacian_recipe(), grid), fn)
        assert np.abs(sol.u - np.broadcast_to(fn(*grid.coords()), grid.shape)).max() < 1e-9


def test_discrete_manufactured_identity():
    grid = Grid.cube(3, 13, -1, 1)
    rec = CoefficientRecipe(g="1 + 0.2*x1**2", V="0.5", W1=("0.2", "0.1*x3", "0"), W2=("0", "0.1", "0"))
    c = build_coefficients(rec, grid)
    x1, x2, x3 = grid.coords()
    exact = np.broadcast_to(np.sin(x1) * np.sin(2 * x2) * np.sin(x3 + 0.3), grid.shape).copy()
    f = assemble(c).apply(exact)
    sol = solve_dirichlet(c, exact, f, tol=1e-12)
    assert np.abs(sol.u - exact).max() < 1e-9
    assert residual_norm(c, sol, f) < 1e-10


def test_forcing_shape_checked():
    grid = Grid.cube(2, 9, -1, 1)
    with pytest.raises(PreconditionError):
        solve_dirichlet(build_coefficients(laplacian_recipe(), grid), 0.0, np.zeros((3, 3)))


def test_manufactured_second_order():
    grids = [Grid.cube(3, n, -1, 1) for n in (9, 17, 33)]
    rep = manufactured_convergence(
        CoefficientRecipe(V="0.5 + x3**2", W2=("0", "0.1*x1", "0.05")), "sin(pi*x1)*exp(x2)*cos(x3)", grids
    )
    assert rep.passed
    assert rep.observed_order == pytest.approx(2.0, abs=0.15)


def test_quadratic_at_truncation_level():
    grids = [Grid.cube(2, n, -1, 1) for n in (9, 17)]
    rep = manufactured_convergence(laplacian_recipe(), "x1**2 - x2**2", grids)
    assert rep.passed
    assert rep.observed_order is None
    assert "truncation" in rep.note


def test_singular_recipe_order_not_asserted():
    grids = [Grid.cube(2, n, -1, 1) for n in (9, 17, 33)]
    rec = CoefficientRecipe(singular=(SingularTerm("V", 1.0, 0.5, (0.01, 0.02)),))
    rep = manufactured_convergence(rec, "sin(x1)*cosh(x2)", grids)
    assert "singular" in rep.note


def test_ensemble_determinism_and_normalization():
    grid = Grid.cube(3, 11, -1, 1)
    c = build_coefficients(CoefficientRecipe(V="0.5"), grid)
    a = SolutionEnsemble(c, 3, seed=4, cap=1)
    b = SolutionEnsemble(c, 3, seed=4, cap=1)
    for i in range(3):
        assert np.array_equal(a[i].u, b[i].u)
        assert lp_norm(a[i].u, box_domain(grid), 2) == pytest.approx(1.0)
        assert a[i].residual_norm <= 1e-10
    assert a[0].boundary == "fourier(cap=1,seed=4,member=0)"
    assert not np.array_equal(a[0].u, SolutionEnsemble(c, 1, seed=5, cap=1)[0].u)


def test_superposed_ensemble_matches_direct_solve():
    grid = Grid.cube(2, 17, -1, 1)
    c = build_coefficients(CoefficientRecipe(V="1"), grid)
    big = SolutionEnsemble(c, 12, seed=1, cap=1)
    assert big.superpose
    direct = solve_dirichlet(c, big.boundary(7), tol=1e-12)
    ref = direct.u / lp_norm(direct.u, box_domain(grid), 2)
    assert np.abs(big[7].u - ref).max() < 1e-8
    assert big[7].residual_norm <= 1e-10


def test_cap_zero_is_constant():
    grid = Grid.cube(2, 9, -1, 1)
    ens = SolutionEnsemble(build_coefficients(laplacian_recipe(), grid), 1, seed=0, cap=0)
    u = ens[0].u
    assert np.ptp(u) < 1e-9
    assert lp_norm(u, box_domain(grid), 2) == pytest.approx(1.0)


def test_from_function_is_exact():
    grid = Grid.cube(2, 9, -1, 1)
    sol = SolutionField.from_function(grid, lambda x1, x2: x1 * x2)
    x1, x2 = grid.coords()
    assert np.array_equal(sol.u, np.broadcast_to(x1 * x2, grid.shape))


@settings(max_examples=15)
@given(
    st.floats(0.05, 1.0),
    st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)),
)
def test_rescaling_preserves_relative_residual(r, center):
    grid = Grid.cube(2, 13, -1, 1)
    c = build_coefficients(CoefficientRecipe(g="1 + 0.1*x2**2", V="0.5", W1=("0.3", "0")), grid)
    sol = solve_dirichlet(c, lambda x1, x2: np.cos(x1) + x2, tol=1e-6)
    before = residual_norm(c, sol)
    after = residual_norm(c.rescaled(center, r), rescale_solution(sol, center, r))
    assert after == pytest.approx(before, rel=1e-6, abs=1e-14)
    assert c.rescaled(center, r).grid.h == pytest.approx(grid.h / r)
