"""Sup-norm growth of solutions away from a small set: sphere maxima, crossing radii, counting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .constants import ConstantsProfile
from .errors import PreconditionError, ResolutionError
from .geometry import (
    RegionMask,
    ball_region,
    density_subset,
    good_scales,
    h_profile,
    marcinkiewicz_integral,
)
from .metrology import ball_values, elliptic_candidate
from .solver import SolutionField
from .three_sphere import alpha_exponent, plan_chain, propagate_chain

_TOL = 1e-9


def _radii_and_values(u: SolutionField, x0, r_max: float):
    grid = u.grid
    slices, offsets, truncated = grid.window(x0, r_max + grid.h)
    if truncated:
        raise PreconditionError("B_{r_max}(x0) must lie inside the grid box")
    rad = np.sqrt(sum(o**2 for o in offsets))
    return rad, np.abs(u.u[slices])


@dataclass
class SphereProfile:
    x0: tuple[float, ...]
    radii: np.ndarray
    m: np.ndarray
    shell_width: float


def sphere_max_profile(u: SolutionField, x0, r_max: float) -> SphereProfile:
    """``m(r) = max |u|`` over the shell ``r - 2h < |x - x0| <= r`` at dyadic ``r >= 4h``."""
    h = u.grid.h
    if r_max < 4 * h * (1 - _TOL):
        raise ResolutionError("resolution exhausted: r below 4h")
    rad, vals = _radii_and_values(u, x0, r_max)
    radii = []
    r = r_max
    while r >= 4 * h * (1 - _TOL):
        radii.append(r)
        r /= 2
    radii = np.array(sorted(radii))
    m = np.array([float(vals[(rad > r - 2 * h + _TOL * h) & (rad <= r + _TOL * h)].max()) for r in radii])
    return SphereProfile(tuple(x0), radii, m, 2 * h)


def beta_from_gamma(A: float, gamma: float) -> float:
    """Growth factor the elliptic estimate yields: ``1 / (A sqrt(2 (1 - gamma))) - 1``."""
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    return 1.0 / (A * math.sqrt(2 * (1 - gamma))) - 1.0


def gamma_for_beta(A: float, beta: float) -> float:
    """Inverse of :func:`beta_from_gamma`."""
    return 1.0 - 1.0 / (2 * (A * (1 + beta)) ** 2)


@dataclass
class GrowthTrace:
    x0: tuple[float, ...]
    radii: np.ndarray
    m: np.ndarray
    envelope: np.ndarray
    A: float
    epsilon: float
    beta: float
    r0: float
    r_seq: list
    K: int
    threshold: float

    def r_of(self, M: float) -> float:
        """``min {r : m(r) >= M}``, ``inf`` when not reached inside the window."""
        i = int(np.searchsorted(self.envelope, M, side="left"))
        return float(self.radii[i]) if i < len(self.radii) else math.inf

    def to_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "A": self.A,
            "epsilon": self.epsilon,
            "beta": self.beta,
            "r0": self.r0,
            "r_seq": list(self.r_seq),
            "K": self.K,
            "threshold": self.threshold,
        }


def growth_trace(
    u: SolutionField,
    x0,
    r_max: float,
    A: float,
    epsilon: float,
    beta: float,
    threshold: float | None = None,
) -> GrowthTrace:
    """Exact-radius sphere maxima around ``x0`` and the sequence ``r_j = r((1+beta)^j 2 A eps)``."""
    if not beta > 0:
        raise PreconditionError("beta > 0 required")
    rad, vals = _radii_and_values(u, x0, r_max)
    inside = rad <= r_max + _TOL * u.grid.h
    rad, vals = rad[inside], vals[inside]
    keys = np.round(rad / u.grid.h, 9)
    uniq, inv = np.unique(keys, return_inverse=True)
    m = np.zeros(len(uniq))
    np.maximum.at(m, inv.ravel(), vals.ravel())
    radii = uniq * u.grid.h
    env = np.maximum.accumulate(m)
    trace = GrowthTrace(tuple(x0), radii, m, env, A, epsilon, beta, math.nan, [], 0, math.inf)
    threshold = r_max if threshold is None else threshold
    level = 2 * A * epsilon
    seq = []
    while True:
        r = trace.r_of(level)
        if not math.isfinite(r):
            break
        seq.append(r)
        level *= 1 + beta
    trace.r0 = seq[0] if seq else math.inf
    trace.r_seq = seq
    trace.threshold = threshold
    trace.K = sum(1 for r in seq if r < threshold)
    return trace


def crossing_step_check(trace: GrowthTrace, h_of, M1: float = 1.0) -> list[tuple[float, float, float]]:
    """Levels where ``r((1+beta)M) > r(M) + 3 h(r(M))`` with ``(1+beta)M <= M1``."""
    out = []
    level = 2 * trace.A * trace.epsilon
    while (1 + trace.beta) * level <= M1:
        r = trace.r_of(level)
        r_next = trace.r_of((1 + trace.beta) * level)
        if not math.isfinite(r_next):
            break
        if r_next > r + 3 * h_of(r) + _TOL:
            out.append((level, r, r_next))
        level *= 1 + trace.beta
    return out


@dataclass
class ClaimResult:
    sup: float
    c: float
    ratio: float
    d_bound: float
    beta: float
    filled: float
    passed: bool

    @property
    def beta_passed(self) -> bool:
        return self.beta <= 0 or self.ratio > 1 + self.beta

    def to_dict(self) -> dict:
        return dict(self.__dict__, beta_passed=self.beta_passed)


def growth_claim_check(
    u: SolutionField,
    F: RegionMask,
    x_star,
    r_star: float,
    y_star,
    gamma: float,
    c: float,
    epsilon: float,
    A: float,
) -> ClaimResult:
    """Verify ``sup_{B_{r*}(x*)} |u|`` meets the lower bound forced by the elliptic estimate.

    With ``d`` that supremum, the hypotheses force
    ``d^2 > (c^2 - A^2 eps^2 gamma) / ((1 - gamma) A^2)``.
    """
    grid = u.grid
    x_star = np.asarray(x_star, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    if not np.linalg.norm(x_star) < 1 - 4 * r_star:
        raise PreconditionError("hypothesis |x*| < 1 - 4 r* fails")
    if not np.linalg.norm(y_star - x_star) < r_star / 2:
        raise PreconditionError("hypothesis y* in B_{r*/2}(x*) fails")
    if not 0 < gamma < 1:
        raise PreconditionError("hypothesis gamma in (0, 1) fails")
    ball = ball_region(grid, x_star, r_star)
    filled = (F & ball).count / ball.count
    if not filled > gamma:
        raise PreconditionError(f"hypothesis |F cap B| > gamma |B| fails ({filled:.4g} <= {gamma:.4g})")
    if F.count and np.max(np.abs(u.u[F.mask])) > epsilon * (1 + 1e-12):
        raise PreconditionError("hypothesis |u| <= eps on F fails")
    uy = abs(float(u.u[grid.node_index(y_star)]))
    if not uy > c:
        raise PreconditionError("hypothesis |u(y*)| > c fails")
    if not c > 2 * A * epsilon:
        raise PreconditionError("hypothesis c > 2 A eps fails")
    if elliptic_candidate(u, x_star, r_star / 2) > A * (1 + 1e-12):
        raise PreconditionError("hypothesis elliptic estimate with constant A fails")
    sup = float(np.abs(ball_values(u, x_star, r_star)).max())
    d2 = max(0.0, (c * c - A * A * epsilon * epsilon * gamma) / ((1 - gamma) * A * A))
    beta = beta_from_gamma(A, gamma)
    return ClaimResult(sup, c, sup / c, math.sqrt(d2), beta, filled, sup * sup >= d2 * (1 - 1e-12))


def r0_lower_bound(epsilon: float, B: float, n: int) -> float:
    """``exp(-B |log eps|^((n+1)/(n+2)))``."""
    if not 0 < epsilon < 0.5:
        raise PreconditionError("eps in (0, 1/2) required")
    if not B > 0:
        raise PreconditionError("B > 0 required")
    return math.exp(-B * abs(math.log(epsilon)) ** ((n + 1) / (n + 2)))


def stretched_envelope(epsilon: float, c: float, mu: float, log_eps: float | None = None) -> float:
    """Bound form ``exp(-c |log eps|^mu)``; ``log_eps`` avoids underflow for tiny eps."""
    le = math.log(epsilon) if log_eps is None else log_eps
    return math.exp(-c * abs(le) ** mu)


def r0_exponent_needed(r0: float, epsilon: float, n: int) -> float:
    """Smallest ``B`` with ``r0 >= exp(-B |log eps|^((n+1)/(n+2)))``."""
    return -math.log(r0) / abs(math.log(epsilon)) ** ((n + 1) / (n + 2))


@dataclass
class IntervalCount:
    level: int
    count: int
    required: int
    spans: bool

    @property
    def passed(self) -> bool:
        return not self.spans or self.count >= self.required


@dataclass
class CountingReport:
    blocks: dict
    intervals: list
    K: int
    K_bound: float
    empty: bool
    notes: list = field(default_factory=list)

    @property
    def blocks_passed(self) -> bool:
        return all(good >= 2 ** (N - 1) for N, (good, _) in self.blocks.items() if N >= 1)

    @property
    def intervals_passed(self) -> bool:
        return all(iv.passed for iv in self.intervals)

    @property
    def K_passed(self) -> bool:
        return self.K <= self.K_bound

    @property
    def passed(self) -> bool:
        return self.blocks_passed and self.intervals_passed and self.K_passed

    def to_dict(self) -> dict:
        return {
            "blocks": {str(k): list(v) for k, v in self.blocks.items()},
            "intervals": [dict(iv.__dict__, passed=iv.passed) for iv in self.intervals],
            "K": self.K,
            "K_bound": self.K_bound,
            "empty": self.empty,
            "notes": list(self.notes),
            "passed": self.passed,
        }


def interval_required(level: int, n: int) -> int:
    """``floor(l^(1/(n+1)) / 4)`` in exact integer arithmetic."""
    k = int(math.floor(0.25 * level ** (1.0 / (n + 1))))
    while k > 0 and (4 * k) ** (n + 1) > level:
        k -= 1
    while (4 * (k + 1)) ** (n + 1) <= level:
        k += 1
    return k


def counting_check(r_seq, h_levels, n: int, epsilon: float, A: float, beta: float, l_range=None) -> CountingReport:
    """Good-scale census, per-interval counts of ``r_j`` and ``K <= |log eps| / log(1 + beta)``.

    ``h_levels`` maps dyadic level ``l`` to ``h_l``. An interval
    ``(2^{-l-1}, 2^{-l}]`` is counted only when the sequence spans it.
    """
    r_seq = sorted(float(r) for r in r_seq)
    levels = dict(h_levels)
    if l_range is None:
        l_range = sorted(levels)
    census = good_scales(levels, n, l_range)
    intervals = []
    for l in census.good:
        lo, hi = 2.0 ** (-l - 1), 2.0**-l
        cnt = sum(1 for r in r_seq if lo < r <= hi)
        spans = bool(r_seq) and r_seq[0] <= lo and r_seq[-1] > hi
        intervals.append(IntervalCount(l, cnt, interval_required(l, n), spans))
    K = len(r_seq)
    K_bound = abs(math.log(epsilon)) / math.log(1 + beta) if beta > 0 else math.inf
    notes = []
    if K == 0:
        notes.append("empty range: no r_j inside the window")
    if not census.blocks:
        notes.append("no complete dyadic block of levels resolvable")
    return CountingReport(census.blocks, intervals, K, K_bound, K == 0, notes)


def deepest_node(region: RegionMask) -> tuple[float, ...]:
    """Node of ``region`` farthest from its complement; first in C order on ties."""
    if region.is_empty:
        raise PreconditionError("region is empty")
    dist = ndimage.distance_transform_edt(region.mask)
    flat = int(np.argmax(dist))
    return tuple(region.grid.node_point(np.unravel_index(flat, region.grid.shape)))


@dataclass
class LinfEnvelope:
    epsilon: float
    x0: tuple[float, ...]
    r0_measured: float
    r0_bound: float
    first_r: float
    first_R: float
    first_rho: float
    first_alpha: float
    first_bound: float
    first_measured: float
    chain_r: float
    chain_alpha: float
    chain_steps: int
    envelope: float
    measured: float
    marcinkiewicz: float
    trace: GrowthTrace

    @property
    def dominates(self) -> bool:
        return self.envelope >= self.measured and self.first_bound >= self.first_measured

    @property
    def r0_ok(self) -> bool:
        return self.r0_measured >= self.r0_bound

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "trace"}
        d["x0"] = list(self.x0)
        d["dominates"] = self.dominates
        d["r0_ok"] = self.r0_ok
        return d


def linf_envelope(
    u: SolutionField,
    F0: RegionMask,
    epsilon: float,
    profile: ConstantsProfile,
    A: float,
    B: float,
    C_linf: float,
    density_radius: float = 0.125,
) -> LinfEnvelope:
    """Certified sup-norm bound on ``B_{1/2}`` from ``|u| <= eps`` on a dense ``F0``.

    Working geometry is the unit ball at the origin. The first step applies
    the sup-norm three-sphere inequality at the deepest point ``x0`` of the
    density subset, from ``B_{r0}`` (``r0`` the crossing-radius lower bound)
    to ``B_{kappa/2}``, with outer bound 1. A ball chain then covers ``B_{1/2}``.
    """
    grid = u.grid
    n = grid.dim
    h = grid.h
    unit = ball_region(grid, np.zeros(n), 1.0)
    half = ball_region(grid, np.zeros(n), 0.5)
    if np.max(np.abs(u.u[unit.mask])) > 1 + 1e-12:
        raise PreconditionError("|u| <= 1 on B_1 required")
    if not F0.issubset(half):
        raise PreconditionError("F0 must lie in B_{1/2}")
    if not 2 * F0.count > half.count:
        raise PreconditionError("|F0| > |B_{1/2}| / 2 required")
    if np.max(np.abs(u.u[F0.mask])) > epsilon * (1 + 1e-12):
        raise PreconditionError("|u| <= eps on F0 required")
    F1 = density_subset(F0, profile.gamma, density_radius)
    if F1.is_empty:
        raise PreconditionError("density subset is empty")
    x0 = deepest_node(F1)
    marc = marcinkiewicz_integral(F1, x0, radius=min(1.0, 1 - float(np.linalg.norm(x0)))).value
    beta = beta_from_gamma(A, profile.gamma)
    reach = 1 - float(np.linalg.norm(x0)) - h
    trace = growth_trace(u, x0, reach, A, epsilon, beta if beta > 0 else 1.0)
    r0_lb = r0_lower_bound(epsilon, B, n)

    rho1 = reach
    R1 = min(profile.kappa / 2, profile.kappa * rho1 * (1 - 1e-6))
    r1 = min(r0_lb, R1 / 2.5)
    alpha1 = alpha_exponent(r1, R1, rho1, profile)
    log_first = math.log(C_linf) + (1 - alpha1) * math.log(2 * A * epsilon)
    first_measured = float(np.abs(ball_values(u, x0, R1)).max())

    rho_c = 0.5
    r_c = min(profile.kappa * rho_c / (2.5 * 1.01), R1)
    alpha_c = alpha_exponent(r_c, 2.5 * r_c, rho_c, profile)
    tree = plan_chain(half, x0, r=r_c, rho=rho_c, cover_all=True)
    log_b0 = min(log_first, 0.0)
    worst = log_b0
    steps = 0
    for chain in tree.chains:
        worst = max(worst, propagate_chain(1.0, 1.0, chain, alpha_c, C_linf, log_bound0=log_b0).final_log)
        steps = max(steps, chain.steps)
    envelope = math.exp(min(worst, 0.0))
    measured = float(np.abs(u.u[half.mask]).max())
    return LinfEnvelope(
        epsilon, x0, trace.r0, r0_lb, r1, R1, rho1, alpha1, math.exp(log_first), first_measured,
        r_c, alpha_c, steps, envelope, measured, marc, trace,
    )
