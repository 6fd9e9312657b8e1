import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ucprop.errors import PreconditionError, ResolutionError
from ucprop.geometry import (
    Grid,
    RegionMask,
    ball_region,
    ball_sums,
    ball_sums_at,
    box_domain,
    density_subset,
    distance_to_set,
    full_region,
    good_scales,
    h_profile,
    inner_region,
    marcinkiewicz_integral,
)


def test_node_index_roundtrip(grid3):
    idx = (3, 17, 30)
    assert grid3.node_index(grid3.node_point(idx)) == idx
    with pytest.raises(PreconditionError):
        grid3.node_index((2.0, 0.0, 0.0))


def test_grid_rejects_tiny():
    with pytest.raises(ValueError):
        Grid.cube(3, 5)


def test_ball_region_matches_bruteforce(grid3):
    c, r = (0.1, -0.2, 0.05), 0.37
    X = grid3.mesh()
    brute = sum((x - ci) ** 2 for x, ci in zip(X, c)) <= r * r + 1e-12
    assert np.array_equal(ball_region(grid3, c, r).mask, brute)


def test_region_algebra(grid2):
    a = ball_region(grid2, (0, 0), 0.5)
    b = ball_region(grid2, (0.3, 0), 0.5)
    assert (a & b).count + (a | b).count == a.count + b.count
    assert (a - b).issubset(a)
    assert ((a - b) & b).is_empty
    assert a.complement().count == grid2.counts[0] ** 2 - a.count


def test_inner_region_unit_cube_empty():
    g = Grid.cube(3, 17, 0.0, 1.0)
    assert inner_region(box_domain(g), 1.0).is_empty


def test_inner_region_small_rho_approaches_domain():
    g = Grid.cube(3, 17, 0.0, 1.0)
    dom = box_domain(g)
    assert inner_region(dom, 1e-6) == dom


def test_inner_region_unit_square():
    g = Grid.cube(2, 201, 0.0, 1.0)
    inner = inner_region(box_domain(g), 0.05)
    # exact side 0.6; node measure within one cell width of the perimeter
    assert abs(inner.measure - 0.36) <= 4 * 0.6 * g.h


def test_inner_region_requires_positive_rho(grid2):
    with pytest.raises(PreconditionError):
        inner_region(box_domain(grid2), 0.0)


@given(st.floats(0.05, 0.3), st.floats(0.05, 0.3))
def test_inner_region_monotone(r1, r2):
    g = Grid.cube(2, 41, 0.0, 1.0)
    dom = box_domain(g)
    a, b = sorted((r1, r2))
    assert inner_region(dom, b).issubset(inner_region(dom, a))


@given(st.floats(0.05, 0.4), st.integers(0, 10**6))
def test_ball_sums_at_agrees_with_full(radius, seed):
    g = Grid.cube(3, 21, -1.0, 1.0)
    rng = np.random.default_rng(seed)
    v = rng.random(g.shape)
    m = rng.random(g.shape) < 0.05
    assert np.allclose(ball_sums(g, v, radius)[m], ball_sums_at(g, v, radius, m))


def test_density_full_ball_contains_inner_ball():
    g = Grid.cube(3, 65, -1.0, 1.0)
    F = ball_region(g, (0, 0, 0), 0.5)
    r1 = 0.125
    F1 = density_subset(F, 0.5, r1)
    assert ball_region(g, (0, 0, 0), 0.5 - r1).issubset(F1)


def test_density_single_node_empty(grid3):
    m = np.zeros(grid3.shape, bool)
    m[16, 16, 16] = True
    assert density_subset(RegionMask(grid3, m), 0.5, 0.25).is_empty


def test_density_slab_collar():
    g = Grid.cube(3, 65, -1.0, 1.0)
    X = g.mesh()
    F = ball_region(g, (0, 0, 0), 0.5) - RegionMask(g, np.abs(X[0]) < 0.025)
    F1 = density_subset(F, 0.9, 0.125)
    assert not (F1 & RegionMask(g, np.abs(X[0]) < 0.05)).count
    assert F1.count > 0


def test_density_resolution_floor(grid3):
    with pytest.raises(ResolutionError):
        density_subset(full_region(grid3), 0.5, grid3.h)


def test_h_profile_full_set_is_zero(grid3):
    prof = h_profile(full_region(grid3), (0, 0, 0), 0.5)
    assert np.all(prof.values == 0)


def test_h_profile_radial_geometry():
    g = Grid.cube(3, 81, -1.0, 1.0)
    F1 = ball_region(g, (0, 0, 0), 0.5)
    prof = h_profile(F1, (0, 0, 0), 0.6, radii=[0.6])
    # shell half-width h plus lattice rounding
    assert abs(prof.at(0.6) - 0.1) <= 1.5 * g.h


def test_h_profile_matches_distance_transform():
    g = Grid.cube(3, 41, -1.0, 1.0)
    X = g.mesh()
    F1 = ball_region(g, (0, 0, 0), 0.6) - RegionMask(g, np.abs(X[0] - 0.3) < 0.06)
    prof = h_profile(F1, (0, 0, 0), 0.5)
    d = distance_to_set(F1)
    rad = np.sqrt(sum(x**2 for x in X))
    for r, v in zip(prof.radii, prof.values):
        sel = np.abs(rad - r) <= g.h + 1e-12
        assert v == pytest.approx(d[sel].max())


def test_h_profile_requires_member(grid3):
    F1 = ball_region(grid3, (0.5, 0.5, 0.5), 0.1)
    with pytest.raises(PreconditionError):
        h_profile(F1, (0, 0, 0), 0.3)


def test_marcinkiewicz_zero_when_covered(grid2):
    assert marcinkiewicz_integral(full_region(grid2), (0, 0), 0.9).value == 0.0


def test_marcinkiewicz_disc_closed_form():
    g = Grid.cube(2, 513, -1.0, 1.0)
    val = marcinkiewicz_integral(ball_region(g, (0, 0), 0.5), (0, 0)).value
    assert val == pytest.approx(2 * math.pi * (math.log(2) - 0.5), rel=0.02)


def test_marcinkiewicz_single_point_grows_under_refinement():
    vals = []
    for n in (65, 129):
        g = Grid.cube(2, n, -1.0, 1.0)
        m = np.zeros(g.shape, bool)
        m[g.node_index((0, 0))] = True
        vals.append(marcinkiewicz_integral(RegionMask(g, m), (0, 0), 0.5).value)
    # logarithmic divergence: each halving of h adds 2 pi ln 2
    assert vals[1] - vals[0] == pytest.approx(2 * math.pi * math.log(2), rel=0.05)


def test_good_scales_all_good():
    assert good_scales(lambda l: 2.0 ** (-2 * l), 3, range(1, 21)).good == list(range(1, 21))


def test_good_scales_boundary_at_sixteen():
    good = good_scales(lambda l: 2.0 ** (-l - 1), 3, range(1, 40)).good
    assert good == list(range(1, 16))


def test_good_scales_none():
    assert good_scales(lambda l: 2.0**-l, 3, range(1, 30)).good == []


def test_good_scales_blocks():
    cen = good_scales(lambda l: 2.0 ** (-2 * l), 3, range(1, 17))
    assert cen.blocks == {0: (1, 1), 1: (2, 2), 2: (4, 4), 3: (8, 8)}
