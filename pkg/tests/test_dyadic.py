from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ucprop.dyadic import (
    CubeFamily,
    DyadicCube,
    Root,
    bruteforce_step,
    cube_slices,
    family_cells,
    filled_ratio,
    iterate_families,
    maximal_filled_cubes,
    maximal_paths,
    nadirashvili_step,
)
from ucprop.errors import ContractError, PreconditionError, ResolutionError
from ucprop.geometry import Grid, RegionMask, full_region

ROOT2 = Root((0.5, 0.5), 1.0)


@pytest.fixture(scope="module")
def unit_grid():
    return Grid.cube(2, 65, 0.0, 1.0)


def quadrant(grid):
    X = grid.mesh()
    return RegionMask(grid, (X[0] < 0.5) & (X[1] < 0.5))


def test_cube_geometry():
    c = DyadicCube(ROOT2, (4, 1))
    assert c.side == 0.25
    assert c.center == pytest.approx((0.625, 0.625))
    assert c.fraction == Fraction(1, 16)
    assert DyadicCube(ROOT2, (4,)).contains(c)
    assert c.parent().path == (4,)
    assert len(c.children()) == 4


def test_family_rejects_nested():
    with pytest.raises(ContractError):
        CubeFamily(ROOT2, frozenset({(1,), (1, 2)}))


def test_cube_slices_partition(unit_grid):
    total = 0
    for c in DyadicCube(ROOT2).children():
        sl = cube_slices(unit_grid, c)
        total += np.prod([s.stop - s.start for s in sl])
    assert total == 64 * 64


def test_cube_slices_resolution(unit_grid):
    with pytest.raises(ResolutionError):
        cube_slices(unit_grid, DyadicCube(ROOT2, (1,) * 8))


def test_filled_ratio_trivial(unit_grid):
    assert filled_ratio(DyadicCube(ROOT2, (2, 3)), full_region(unit_grid)) == 1.0
    assert filled_ratio(DyadicCube(ROOT2), RegionMask(unit_grid, np.zeros(unit_grid.shape, bool))) == 0.0


def test_filled_ratio_quadrant(unit_grid):
    assert filled_ratio(DyadicCube(ROOT2), quadrant(unit_grid)) == 0.25


def test_maximal_filled_cubes(unit_grid):
    root = DyadicCube(ROOT2)
    assert maximal_filled_cubes(root, full_region(unit_grid), 0.9, 3).paths == {()}
    assert maximal_filled_cubes(root, quadrant(unit_grid), 0.5, 3).paths == {(1,)}
    assert maximal_filled_cubes(root, quadrant(unit_grid), 0.2, 3).paths == {()}


def test_step_root_is_case_two():
    res = nadirashvili_step(CubeFamily(ROOT2, frozenset({()})), 0.5)
    assert res.case == "II" and res.family1.paths == {()}


def test_step_quadrant_half():
    res = nadirashvili_step(CubeFamily(ROOT2, frozenset({(1,)})), 0.5)
    assert res.case == "I" and res.family1.paths == {()}
    assert res.measure1 >= 2 * Fraction(1, 4)


def test_step_quadrant_small_beta():
    res = nadirashvili_step(CubeFamily(ROOT2, frozenset({(1,)})), 0.2)
    assert res.case == "II" and res.family1.paths == {()}


def test_step_requires_beta():
    with pytest.raises(PreconditionError):
        nadirashvili_step(CubeFamily(ROOT2, frozenset({(1,)})), 1.0)


def test_iterate_root_zero_steps():
    assert iterate_families(CubeFamily(ROOT2, frozenset({()})), 0.5).N == 0


def test_iterate_quadrant_one_step():
    tr = iterate_families(CubeFamily(ROOT2, frozenset({(1,)})), 0.5)
    assert tr.N == 1
    assert [f.paths for f in tr.trace] == [{(1,)}, {()}]


def test_iterate_three_rank_two_cubes():
    fam = CubeFamily(ROOT2, frozenset({(1, 1), (2, 4), (3, 2)}))
    beta = 0.5
    tr = iterate_families(fam, beta)
    e1 = fam.measure
    for j, f in enumerate(tr.trace[:-1]):
        assert f.measure >= e1 / Fraction(beta) ** j
    assert tr.trace[-1].is_full()


def antichains(dim=2, max_rank=3):
    k = 2**dim
    path = st.lists(st.integers(1, k), min_size=0, max_size=max_rank).map(tuple)
    return st.lists(path, min_size=1, max_size=10).map(maximal_paths)


@given(antichains(), st.sampled_from([0.1, 0.25, 0.5, 0.6, 0.9]))
def test_step_matches_bruteforce(paths, beta):
    fam = CubeFamily(ROOT2, paths)
    res = nadirashvili_step(fam, beta)
    closure, cells, case = bruteforce_step(fam, beta, 3)
    assert closure == res.closure.paths
    assert np.array_equal(cells, family_cells(res.family1, 3))
    assert case == res.case


@given(antichains(), st.sampled_from([0.25, 0.5, 0.75]))
def test_step_dichotomy(paths, beta):
    fam = CubeFamily(ROOT2, paths)
    res = nadirashvili_step(fam, beta)
    b = Fraction(beta)
    if res.case == "I":
        assert res.measure1 >= res.measure / b
    else:
        assert res.measure / b > 1 and res.measure1 == 1


@given(antichains(3, 2), st.sampled_from([0.3, 0.5]))
def test_step_matches_bruteforce_3d(paths, beta):
    root = Root((0.0, 0.0, 0.0), 2.0)
    fam = CubeFamily(root, paths)
    res = nadirashvili_step(fam, beta)
    closure, cells, case = bruteforce_step(fam, beta, 2)
    assert closure == res.closure.paths and case == res.case
    assert np.array_equal(cells, family_cells(res.family1, 2))


@given(antichains())
def test_iteration_terminates_with_growth(paths):
    fam = CubeFamily(ROOT2, paths)
    tr = iterate_families(fam, 0.5)
    assert tr.trace[-1].is_full()
    ms = [f.measure for f in tr.trace]
    assert all(b >= a for a, b in zip(ms, ms[1:]))
