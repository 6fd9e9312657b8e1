"""Norms on balls and regions, gradients, and the doubling / Caccioppoli /
reverse-Hölder / Muckenhoupt functionals evaluated on discrete solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import ConstantsProfile
from .errors import PreconditionError, ResolutionError
from .geometry import Ball, Grid, RegionMask, ball_kernel, ball_sums_at, ball_window, box_domain, inner_region
from .solver import SolutionField

_TOL = 1e-9


def _values(u) -> np.ndarray:
    return u.u if isinstance(u, SolutionField) else np.asarray(u)


def _grid(u, grid=None) -> Grid:
    return u.grid if isinstance(u, SolutionField) else grid


def ball_values(u: SolutionField, center, r: float, require_inside: bool = True) -> np.ndarray:
    """Node values of ``u`` in the closed ball, as a flat array."""
    slices, local, truncated = ball_window(u.grid, center, r)
    if truncated and require_inside:
        raise PreconditionError(f"ball of radius {r:g} at {tuple(center)} leaves the grid box")
    vals = u.u[slices][local]
    if vals.size == 0:
        raise PreconditionError("empty region")
    return vals


def norm_on_region(u: SolutionField, region, p: float = 2) -> float:
    """L2 (midpoint rule) or L-infinity norm over a RegionMask or a Ball."""
    if isinstance(region, Ball):
        vals = ball_values(u, region.center, region.radius, require_inside=False)
    else:
        vals = u.u[region.mask]
        if vals.size == 0:
            raise PreconditionError("empty region")
    if math.isinf(p):
        return float(np.abs(vals).max())
    if p != 2:
        return float((np.sum(np.sort(np.abs(vals) ** p)) * u.grid.cell_volume) ** (1.0 / p))
    return float(math.sqrt(np.sum(np.sort(vals * vals)) * u.grid.cell_volume))


def ball_l2(u: SolutionField, center, r: float, require_inside: bool = True) -> float:
    vals = ball_values(u, center, r, require_inside)
    return float(math.sqrt(np.sum(np.sort(vals * vals)) * u.grid.cell_volume))


def ball_measure(grid: Grid, r: float) -> float:
    return float(np.count_nonzero(ball_kernel(grid, r))) * grid.cell_volume


def gradient_field(u: SolutionField, region: RegionMask | None = None) -> np.ndarray:
    """Centered differences in the interior, one-sided where a neighbour is missing.

    Returns an array of shape ``(dim,) + grid.shape``. With ``region`` given,
    neighbours outside the mask count as missing and nodes outside get 0.
    """
    grid = u.grid
    vals = u.u
    inside = np.ones(grid.shape, dtype=bool) if region is None else region.mask
    out = np.zeros((grid.dim,) + grid.shape)
    for ax in range(grid.dim):
        fwd = np.zeros(grid.shape, dtype=bool)
        bwd = np.zeros(grid.shape, dtype=bool)
        up = [slice(None)] * grid.dim
        lo = [slice(None)] * grid.dim
        up[ax], lo[ax] = slice(1, None), slice(None, -1)
        up, lo = tuple(up), tuple(lo)
        fwd[lo] = inside[up]
        bwd[up] = inside[lo]
        dplus = np.zeros(grid.shape)
        dminus = np.zeros(grid.shape)
        dplus[lo] = (vals[up] - vals[lo]) / grid.h
        dminus[up] = (vals[up] - vals[lo]) / grid.h
        g = np.where(fwd & bwd, 0.5 * (dplus + dminus), np.where(fwd, dplus, np.where(bwd, dminus, 0.0)))
        out[ax] = np.where(inside, g, 0.0)
    return out


def _local_gradient_norm2(u: SolutionField, center, radius: float) -> float:
    """Sum of |grad u|^2 h^n over the ball, with centered differences from a padded window."""
    grid = u.grid
    slices, offsets, truncated = grid.window(center, radius + 2 * grid.h)
    block = u.u[slices]
    grads = np.gradient(block, grid.h)
    if grid.dim == 1:
        grads = [grads]
    d2 = sum(o**2 for o in offsets)
    sel = d2 <= radius * radius + _TOL * grid.h**2
    g2 = sum(g**2 for g in grads)[sel]
    return float(np.sum(np.sort(g2)) * grid.cell_volume)


@dataclass
class FlaggedValue:
    value: float
    flag: str = ""

    @property
    def ok(self) -> bool:
        return not self.flag


def caccioppoli_ratio(u: SolutionField, x, r: float, a: float = 0.5) -> FlaggedValue:
    """``|grad u|_{L2(B_ar)} * r / |u|_{L2(B_r)}``."""
    if not 0 < a < 1:
        raise PreconditionError("a must lie in (0, 1)")
    den = ball_l2(u, x, r)
    if den == 0.0:
        return FlaggedValue(math.nan, "zero denominator")
    num = math.sqrt(_local_gradient_norm2(u, x, a * r))
    return FlaggedValue(num * r / den)


def local_doubling_ratio(u: SolutionField, x, r: float) -> float:
    """``|u|_{L2(B_2r)} / |u|_{L2(B_r)}``."""
    return ball_l2(u, x, 2 * r) / ball_l2(u, x, r)


@dataclass
class DoublingRecord:
    center: tuple[float, ...]
    r_small: float
    r_large: float
    norm_small: float
    norm_large: float
    ratio: float
    C: float
    stride: int
    n_centers: int
    rho: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _strided(region: RegionMask, stride: int) -> np.ndarray:
    if stride <= 1:
        return region.mask
    keep = region.mask.copy()
    for ax in range(region.grid.dim):
        idx = np.arange(region.grid.counts[ax]) % stride == 0
        shape = [1] * region.grid.dim
        shape[ax] = -1
        keep &= idx.reshape(shape)
    return keep if keep.any() else region.mask


def doubling_constant(
    u: SolutionField,
    rho: float,
    profile: ConstantsProfile,
    domain: RegionMask | None = None,
    stride: int | None = None,
) -> DoublingRecord:
    """``C0 * max_{x in Omega(rho/2)} (|u|_{B_rho(x)} / |u|_{B_{2 kappa rho}(x)})^H1``."""
    grid = u.grid
    domain = box_domain(grid) if domain is None else domain
    small = 2 * profile.kappa * rho
    if small < 4 * grid.h * (1 - 1e-9):
        raise ResolutionError("resolution exhausted: 2*kappa*rho below 4h")
    centers = inner_region(domain, rho / 2)
    if centers.is_empty:
        raise PreconditionError("Omega(rho/2) is empty")
    if stride is None:
        stride = max(1, int(math.floor(profile.kappa * rho / (4 * grid.h))))
    scan = _strided(centers, stride)
    u2 = u.u**2
    big = ball_sums_at(grid, u2, rho, scan)
    sm = ball_sums_at(grid, u2, small, scan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(big / sm)
    ratio = np.where(sm > 0, ratio, np.inf)
    i = int(np.argmax(ratio))
    pts = np.argwhere(scan)
    center = tuple(grid.node_point(pts[i]))
    best = float(ratio[i])
    nl, ns = ball_l2(u, center, rho, False), ball_l2(u, center, small, False)
    C = profile.C0 * best**profile.H1
    return DoublingRecord(center, small, rho, ns, nl, best, C, stride, int(scan.sum()), rho)


@dataclass
class DoublingCheck:
    C: float
    violations: int
    checked: int
    worst_ratio: float
    worst: tuple

    @property
    def margin(self) -> float:
        return self.C / self.worst_ratio if self.worst_ratio > 0 else math.inf


def doubling_check(
    u: SolutionField,
    rho: float,
    C: float,
    profile: ConstantsProfile,
    domain: RegionMask | None = None,
    radii=None,
) -> DoublingCheck:
    """Count centers in Omega(rho) and radii r < kappa*rho with
    ``int_{B_2r} u^2 > C int_{B_r} u^2``."""
    grid = u.grid
    domain = box_domain(grid) if domain is None else domain
    centers = inner_region(domain, rho)
    if radii is None:
        kr = profile.kappa * rho
        radii = [grid.h * m for m in range(1, int(math.ceil(kr / grid.h - 1e-9)))]
        radii = [r for r in radii if r < kr] or [grid.h]
    u2 = u.u**2
    violations = checked = 0
    worst_ratio, worst = 0.0, ()
    for r in radii:
        s1 = ball_sums_at(grid, u2, r, centers.mask)
        s2 = ball_sums_at(grid, u2, 2 * r, centers.mask)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(s1 > 0, s2 / s1, np.where(s2 > 0, np.inf, 1.0))
        violations += int(np.count_nonzero(s2 > C * s1))
        checked += q.size
        j = int(np.argmax(q))
        if q.size and q[j] > worst_ratio:
            worst_ratio = float(q[j])
            worst = (tuple(grid.node_point(np.argwhere(centers.mask)[j])), r)
    return DoublingCheck(C, violations, checked, worst_ratio, worst)


@dataclass
class MuckenhouptResult:
    lhs: float
    rhs: float
    passed: bool
    total: float

    @property
    def margin(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


def alpha_weight(C: float, profile: ConstantsProfile) -> float:
    """Complement of ``beta = 1 - k C^{-n}``."""
    return profile.k * C ** (-profile.dim)


def muckenhoupt_check(u: SolutionField, ball: Ball, subset: RegionMask, alpha: float) -> MuckenhouptResult:
    """``int_G u^2 >= (1/2) int_B u^2`` for ``G`` covering more than ``1 - alpha`` of ``B``."""
    grid = u.grid
    slices, local, _ = ball_window(grid, ball.center, ball.radius)
    sub = subset.mask[slices]
    if np.any(sub & ~local):
        raise PreconditionError("subset must lie inside the ball")
    nb = int(np.count_nonzero(local))
    ng = int(np.count_nonzero(sub))
    if not ng > (1 - alpha) * nb:
        raise PreconditionError(f"|G| = {ng} nodes is not above (1 - alpha)|B| = {(1 - alpha) * nb:g}")
    block = u.u[slices] ** 2
    total = float(np.sum(np.sort(block[local]))) * grid.cell_volume
    lhs = float(np.sum(np.sort(block[sub]))) * grid.cell_volume
    return MuckenhouptResult(lhs, 0.5 * total, lhs >= 0.5 * total, total)


def adversarial_subset(u: SolutionField, ball: Ball, alpha: float) -> RegionMask:
    """Largest-|u| nodes removed from the ball, as many as the measure condition allows."""
    grid = u.grid
    slices, local, _ = ball_window(grid, ball.center, ball.radius)
    nb = int(np.count_nonzero(local))
    n_remove = max(0, int(math.ceil(alpha * nb)) - 1)
    block = np.where(local, np.abs(u.u[slices]), -np.inf)
    sub = local.copy()
    if n_remove:
        order = np.argsort(block, axis=None, kind="stable")[::-1][:n_remove]
        sub.flat[order] = False
    m = np.zeros(grid.shape, dtype=bool)
    m[slices] = sub
    return RegionMask(grid, m)


def reverse_holder_exponent(dim: int, p: float | None = None) -> float:
    if p is not None:
        return float(p)
    return 2.0 * dim / (dim - 2) if dim > 2 else 6.0


def reverse_holder_ratio(u: SolutionField, ball: Ball, p: float | None = None) -> FlaggedValue:
    """``|u|_{L^p(B)} / |u|_{L^2(B)}`` with ``p = 2n/(n-2)`` by default."""
    p = reverse_holder_exponent(u.grid.dim, p)
    vals = ball_values(u, ball.center, ball.radius)
    hv = u.grid.cell_volume
    l2 = math.sqrt(float(np.sum(np.sort(vals**2))) * hv)
    if l2 == 0:
        return FlaggedValue(math.nan, "zero denominator")
    lp = (float(np.sum(np.sort(np.abs(vals) ** p))) * hv) ** (1.0 / p)
    flag = "" if u.grid.dim > 2 else "diagnostic only in 2D"
    return FlaggedValue(lp / l2, flag)


def elliptic_candidate(u: SolutionField, x, r: float) -> float:
    """``sqrt(max_{B_r}|u|^2 |B_2r| / int_{B_2r} u^2)``."""
    inner = ball_values(u, x, r)
    outer = ball_values(u, x, 2 * r)
    ms = float(np.mean(outer**2))
    if ms == 0:
        return 0.0 if np.max(np.abs(inner)) == 0 else math.inf
    return float(np.max(np.abs(inner)) / math.sqrt(ms))


def elliptic_estimate_constant(ensemble, balls) -> float:
    """Smallest ``A`` validating the sup-versus-mean-square estimate on the sample."""
    best = 0.0
    for u in ensemble:
        for x, r in balls:
            best = max(best, elliptic_candidate(u, x, r))
    return best
