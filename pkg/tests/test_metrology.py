import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucprop.constants import ConstantsProfile
from ucprop.errors import PreconditionError, ResolutionError
from ucprop.geometry import Ball, Grid, ball_region
from ucprop.metrology import (
    adversarial_subset,
    ball_l2,
    caccioppoli_ratio,
    doubling_check,
    doubling_constant,
    elliptic_candidate,
    elliptic_estimate_constant,
    gradient_field,
    local_doubling_ratio,
    muckenhoupt_check,
    norm_on_region,
    reverse_holder_ratio,
)
from ucprop.geometry import RegionMask
from ucprop.solver import CoefficientRecipe, SingularTerm, SolutionEnsemble, SolutionField, build_coefficients


@pytest.fixture(scope="module")
def fine():
    return Grid.cube(3, 145, -1.1, 1.1)


def field(grid, fn):
    return SolutionField.from_function(grid, fn)


def one(*xs):
    return np.ones(np.broadcast_shapes(*(x.shape for x in xs)))


def test_unit_ball_norms(fine):
    assert fine.h <= 1 / 64
    ball = Ball((0, 0, 0), 1.0)
    assert norm_on_region(field(fine, one), ball) == pytest.approx(math.sqrt(4 * math.pi / 3), rel=1e-4)
    lin = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    assert norm_on_region(lin, ball) == pytest.approx(math.sqrt(4 * math.pi / 15), rel=1e-4)
    assert norm_on_region(lin, ball, math.inf) <= 1.0


def test_ball_outside_box_rejected(grid3):
    u = field(grid3, one)
    with pytest.raises(PreconditionError):
        ball_l2(u, (0.9, 0, 0), 0.5)
    assert ball_l2(u, (0.9, 0, 0), 0.5, require_inside=False) > 0


def test_gradient_exact_on_linear(grid3):
    u = field(grid3, lambda a, b, c: 2 * a - b + 0.5 * c)
    g = gradient_field(u)
    assert np.allclose(g[0], 2) and np.allclose(g[1], -1) and np.allclose(g[2], 0.5)


def test_gradient_one_sided_inside_region(grid2):
    u = field(grid2, lambda a, b: a**2 + 0 * b)
    region = ball_region(grid2, (0, 0), 0.3)
    g = gradient_field(u, region)
    assert np.all(g[:, ~region.mask] == 0)
    assert np.all(np.isfinite(g))


def test_caccioppoli_on_linear(fine):
    u = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    assert caccioppoli_ratio(u, (0, 0, 0), 0.5).value == pytest.approx(math.sqrt(5 / 8), rel=0.01)
    with pytest.raises(PreconditionError):
        caccioppoli_ratio(u, (0, 0, 0), 0.5, a=1.0)


def test_caccioppoli_zero_flagged(grid3):
    z = field(grid3, lambda a, b, c: 0 * (a + b + c))
    assert not caccioppoli_ratio(z, (0, 0, 0), 0.3).ok


def test_doubling_of_constant():
    grid = Grid.cube(3, 161, -1, 1)
    profile = ConstantsProfile(kappa=0.125)
    rec = doubling_constant(field(grid, one), 0.4, profile)
    assert rec.ratio == pytest.approx(8.0, rel=0.01)
    assert rec.C == pytest.approx(rec.ratio**5)
    assert 8.0**5 == 32768.0


def test_doubling_resolution_exhausted(grid3):
    with pytest.raises(ResolutionError):
        doubling_constant(field(grid3, one), 0.1, ConstantsProfile(kappa=0.125))


def test_doubling_check_constant(grid2):
    u = field(grid2, one)
    profile = ConstantsProfile(dim=2, kappa=0.2)
    ok = doubling_check(u, 0.15, 4.5, profile)
    assert ok.violations == 0 and ok.checked > 0
    bad = doubling_check(u, 0.15, 2.0, profile)
    assert bad.violations == bad.checked


def test_local_doubling_constant(grid2):
    assert local_doubling_ratio(field(grid2, one), (0, 0), 0.25) == pytest.approx(2.0, rel=0.02)


def test_reverse_holder_constant(fine):
    r = reverse_holder_ratio(field(fine, one), Ball((0, 0, 0), 1.0))
    assert r.value == pytest.approx((4 * math.pi / 3) ** (-1 / 3), abs=1e-3)
    assert r.value == pytest.approx(0.620, abs=1e-3)
    assert r.ok


def test_reverse_holder_flags_plane(grid2):
    assert not reverse_holder_ratio(field(grid2, one), Ball((0, 0), 0.5)).ok


def test_elliptic_candidates(fine):
    assert elliptic_candidate(field(fine, one), (0, 0, 0), 0.4) == pytest.approx(1.0)
    lin = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    assert elliptic_candidate(lin, (0, 0, 0), 0.4) == pytest.approx(math.sqrt(5) / 2, rel=0.02)
    balls = [((0, 0, 0), 0.4), ((0.1, 0, 0), 0.3)]
    assert elliptic_estimate_constant([field(fine, one), lin], balls) >= elliptic_candidate(lin, (0, 0, 0), 0.4)


def test_muckenhoupt_constant(grid2):
    u = field(grid2, one)
    ball = Ball((0, 0), 0.5)
    sub = adversarial_subset(u, ball, 0.3)
    res = muckenhoupt_check(u, ball, sub, 0.3)
    assert res.passed and res.margin > 1
    with pytest.raises(PreconditionError):
        muckenhoupt_check(u, ball, ball_region(grid2, (0, 0), 0.2), 0.3)
    with pytest.raises(PreconditionError):
        muckenhoupt_check(u, ball, ball_region(grid2, (0, 0), 0.6), 0.3)


def test_muckenhoupt_concentrated_fails(grid2):
    u = field(grid2, lambda a, b: np.exp(-200 * (a**2 + b**2)))
    ball = Ball((0, 0), 0.5)
    res = muckenhoupt_check(u, ball, adversarial_subset(u, ball, 0.3), 0.3)
    assert not res.passed


@settings(max_examples=20)
@given(st.floats(0.05, 0.5), st.floats(-3, 3).filter(lambda t: t == 0 or abs(t) > 1e-100))
def test_norms_homogeneous(r, t):
    grid = Grid.cube(2, 33, -1, 1)
    u = field(grid, lambda a, b: np.cos(a) + b)
    v = SolutionField(grid, t * u.u, 0.0)
    assert ball_l2(v, (0, 0), r) == pytest.approx(abs(t) * ball_l2(u, (0, 0), r), rel=1e-12, abs=1e-300)


@settings(max_examples=20)
@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_ball_norm_monotone_in_radius(r1, r2):
    grid = Grid.cube(2, 33, -1, 1)
    u = field(grid, lambda a, b: np.sin(3 * a) * b)
    lo, hi = sorted((r1, r2))
    assert ball_l2(u, (0, 0), lo) <= ball_l2(u, (0, 0), hi)


def test_gradient_second_order():
    errs = []
    for n in (33, 65, 129):
        grid = Grid.cube(2, n, -1, 1)
        u = field(grid, lambda a, b: np.sin(math.pi * a) + 0 * b)
        x = grid.mesh()[0][1:-1, 1:-1]
        errs.append(np.max(np.abs(gradient_field(u)[0][1:-1, 1:-1] - math.pi * np.cos(math.pi * x))))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_caccioppoli_harmonic_cubic_stable():
    exact = 0.4 * math.sqrt(24 * 0.2**6 / 0.4**8)
    for n in (65, 129, 257):
        u = field(Grid.cube(2, n, -1, 1), lambda a, b: a**3 - 3 * a * b**2)
        assert caccioppoli_ratio(u, (0, 0), 0.4).value == pytest.approx(exact, rel=0.05)


def test_local_doubling_linear(fine):
    lin = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    assert local_doubling_ratio(lin, (0, 0, 0), 0.25) == pytest.approx(2**2.5, rel=0.05)


def test_muckenhoupt_annulus(fine):
    lin = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    ball = Ball((0, 0, 0), 1.0)
    G = RegionMask(fine, ball_region(fine, (0, 0, 0), 1.0).mask & ~ball_region(fine, (0, 0, 0), 0.3).mask)
    res = muckenhoupt_check(lin, ball, G, 0.05)
    assert res.passed
    assert res.lhs / res.total == pytest.approx(1 - 0.3**5, rel=0.01)


def test_reverse_holder_linear(fine):
    lin = field(fine, lambda a, b, c: a + 0 * b + 0 * c)
    exact = (4 * math.pi / 63) ** (1 / 6) / (4 * math.pi / 15) ** 0.5
    assert reverse_holder_ratio(lin, Ball((0, 0, 0), 1.0)).value == pytest.approx(exact, rel=0.03)


def test_elliptic_constant_stable_on_singular_ensemble():
    rec = CoefficientRecipe(singular=(SingularTerm("V", 1.0, 1.0, (0.05, 0.05)),))
    balls = [((0, 0), 0.2), ((0.3, -0.2), 0.15)]
    A = []
    for n in (65, 129, 257):
        ens = SolutionEnsemble(build_coefficients(rec, Grid.cube(2, n, -1, 1)), 4, 7, cap=2)
        A.append(elliptic_estimate_constant(list(ens), balls))
    assert max(A) <= 1.1 * A[-1] and min(A) >= 0.9 * A[-1]
