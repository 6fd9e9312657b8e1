"""Propagation of smallness from a set of positive measure to a compact subdomain."""
from __future__ import annotations

import math
from itertools import product
from dataclasses import dataclass, field

import numpy as np

from .constants import ConstantsProfile
from .dyadic import (
    CubeFamily,
    DyadicCube,
    Root,
    cube_slices,
    iterate_families,
    maximal_filled_cubes,
)
from .errors import PreconditionError, ResolutionError
from .geometry import RegionMask, ball_sums_at, box_domain, inner_region
from .metrology import ball_l2, doubling_constant, norm_on_region
from .solver import SolutionField
from .three_sphere import alpha_exponent, chain_step_geometry, plan_chain, propagate_chain


def cube_mass(u: SolutionField, cube: DyadicCube) -> tuple[float, float]:
    """``(int_Q u^2, |Q|)`` by node sums over the half-open index ranges."""
    block = u.u[cube_slices(u.grid, cube)]
    hv = u.grid.cell_volume
    return float(np.sum(np.sort((block * block).ravel()))) * hv, block.size * hv


def good_test(u: SolutionField, cube: DyadicCube, delta: float) -> bool:
    """``int_Q u^2 <= delta |Q|``."""
    mass, meas = cube_mass(u, cube)
    return mass <= delta * meas


def lattice_cube(grid, start: tuple[int, ...], side_nodes: int) -> DyadicCube:
    """Cube whose half-open node range is ``[start, start + side_nodes)`` per axis."""
    h = grid.h
    center = tuple(o + h * (s + side_nodes / 2 - 0.5) for o, s in zip(grid.origin, start))
    return DyadicCube(Root(center, side_nodes * h))


def _side_nodes(r1: float, h: float) -> int:
    m = int(math.floor(r1 / h + 1e-9))
    if m < 4:
        raise ResolutionError("resolution exhausted: cube side below 4 cells")
    return 2 ** int(math.floor(math.log2(m)))


@dataclass
class InitialFamily:
    Q0: DyadicCube
    family: CubeFamily
    E1: RegionMask
    beta: float
    D: float
    C: float
    lattice_fraction: float
    chebyshev_ok: bool
    violations: list = field(default_factory=list)
    max_rank: int = 0

    def to_dict(self) -> dict:
        return {
            "Q0_center": list(self.Q0.center),
            "Q0_side": self.Q0.side,
            "family_size": len(self.family),
            "E1_measure": self.E1.measure,
            "beta": self.beta,
            "D": self.D,
            "C": self.C,
            "lattice_fraction": self.lattice_fraction,
            "chebyshev_ok": self.chebyshev_ok,
            "goodness_violations": len(self.violations),
            "max_rank": self.max_rank,
        }


def goodness_factor(C: float, profile: ConstantsProfile) -> float:
    return profile.a_n * C**profile.gamma_n


def filled_threshold(C: float, profile: ConstantsProfile) -> float:
    return 1.0 - profile.k * C ** (-profile.dim)


def select_initial_family(
    u: SolutionField,
    E: RegionMask,
    rho1: float,
    epsilon: float,
    profile: ConstantsProfile,
    domain: RegionMask | None = None,
    C: float | None = None,
) -> InitialFamily:
    """Pick ``Q0`` on the side-``kappa rho1`` lattice and its maximal beta-filled cubes.

    ``E1 = {x in E : |u| <= sqrt(2) eps}``; ``Q0`` maximizes ``|E1 cap Q0|``
    among lattice cubes farther than ``rho1`` from the boundary. Each returned
    cube is checked for ``D eps^2``-goodness and failures are listed.
    """
    grid = u.grid
    domain = box_domain(grid) if domain is None else domain
    if E.is_empty:
        raise PreconditionError("E has measure zero")
    hv = grid.cell_volume
    mass_E = float(np.sum(u.u[E.mask] ** 2)) * hv
    if mass_E > epsilon**2 * E.measure * (1 + 1e-12):
        raise PreconditionError("|u|_{L2(E)}^2 <= eps^2 |E| violated")
    if not E.issubset(inner_region(domain, rho1)):
        raise PreconditionError("E must lie in Omega(rho1)")
    E1 = RegionMask(grid, E.mask & (np.abs(u.u) <= math.sqrt(2) * epsilon))
    chebyshev_ok = 2 * E1.count >= E.count
    if C is None:
        C = doubling_constant(u, rho1, profile, domain).C
    beta = filled_threshold(C, profile)
    D = goodness_factor(C, profile)

    s = _side_nodes(profile.kappa * rho1, grid.h)
    far = inner_region(domain, rho1 / 4)
    best, best_start = -1, None
    starts = [range(0, c - s + 1, s) for c in grid.counts]
    for start in product(*starts):
        sl = tuple(slice(a, a + s) for a in start)
        if not far.mask[sl].all():
            continue
        cnt = int(np.count_nonzero(E1.mask[sl]))
        if cnt > best:
            best, best_start = cnt, start
    if best_start is None or best <= 0:
        raise PreconditionError("no lattice cube meets E1 away from the boundary")
    Q0 = lattice_cube(grid, best_start, s)
    max_rank = int(math.log2(s // 4)) if s >= 4 else 0
    beta_eff = min(max(beta, 1e-12), 1 - 1e-15)
    family = maximal_filled_cubes(Q0, E1, beta_eff, max_rank)
    violations = []
    for cube in family.cubes():
        sub = DyadicCube(Q0.root, cube.path)
        mass, meas = cube_mass(u, sub)
        if mass > D * epsilon**2 * meas:
            violations.append((cube.path, mass, D * epsilon**2 * meas))
    return InitialFamily(Q0, family, E1, beta, D, C, best / E.count, chebyshev_ok, violations, max_rank)


@dataclass
class GoodnessLedger:
    Q0: DyadicCube
    D: float
    beta: float
    epsilon: float
    masses: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)


@dataclass
class PropagationResult:
    N: int
    certified: float
    measured: float | None
    violations: list
    cases: list

    @property
    def dominates(self) -> bool:
        return self.measured is None or self.certified >= self.measured


def propagate_goodness(ledger: GoodnessLedger, family1: CubeFamily, u: SolutionField | None = None) -> PropagationResult:
    """Run the covering iteration and inflate goodness levels along the trace.

    Cubes of the ``j``-th family (0-based) are certified ``D^(2j+1) eps^2``-good,
    so ``Q0`` ends ``D^(2N+1) eps^2``-good after ``N`` steps.
    """
    it = iterate_families(family1, ledger.beta)
    eps2 = ledger.epsilon**2
    violations = []
    for j, fam in enumerate(it.trace):
        level = ledger.D ** (2 * j + 1) * eps2
        for cube in fam.cubes():
            sub = DyadicCube(ledger.Q0.root, cube.path)
            ledger.levels[cube.path] = min(ledger.levels.get(cube.path, math.inf), level)
            if u is not None:
                mass, meas = cube_mass(u, sub)
                ledger.masses[cube.path] = mass
                if mass > level * meas:
                    violations.append((j, cube.path, mass, level * meas))
    q0_meas = cube_mass(u, ledger.Q0)[1] if u is not None else ledger.Q0.side**ledger.Q0.dim
    certified = ledger.D ** (2 * it.N + 1) * eps2 * q0_meas
    measured = cube_mass(u, ledger.Q0)[0] if u is not None else None
    return PropagationResult(it.N, certified, measured, violations, it.cases)


@dataclass
class SmallBall:
    center: tuple[float, ...]
    radius: float
    certified: float
    measured: float
    branch: str
    regime: str
    C: float
    envelope: float
    details: dict = field(default_factory=dict)

    @property
    def dominates(self) -> bool:
        return self.certified >= self.measured

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["center"] = list(self.center)
        d["dominates"] = self.dominates
        return d


def log_envelope(epsilon: float, profile: ConstantsProfile) -> float:
    """``|log eps|^(-2 sigma / H1)``; infinite for ``eps >= 1``."""
    if epsilon >= 1:
        return math.inf
    return abs(math.log(epsilon)) ** (-2 * profile.sigma / profile.H1)


def loglog_bound(epsilon: float, C: float, c: float) -> float:
    """Bound form ``C |log eps|^(-c)`` of the L2 propagation estimate."""
    if not 0 < epsilon < 1:
        raise PreconditionError("eps in (0, 1) required")
    return C * abs(math.log(epsilon)) ** (-c)


def _ratio_scan(u: SolutionField, region: RegionMask, r_big: float, r_small: float):
    """Centers of ``region`` with ``|u|_{B_big} / |u|_{B_small}`` at each."""
    u2 = u.u**2
    big = ball_sums_at(u.grid, u2, r_big, region.mask)
    small = ball_sums_at(u.grid, u2, r_small, region.mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(small > 0, np.sqrt(big / small), np.inf)
    return region.points(), ratio, small * u.grid.cell_volume


def find_small_ball(
    u: SolutionField,
    E: RegionMask,
    rho1: float,
    epsilon: float,
    profile: ConstantsProfile,
    domain: RegionMask | None = None,
    C: float | None = None,
) -> SmallBall:
    """Ball of radius ``2 kappa rho1`` or ``kappa rho1 / 2`` carrying a certified small mass.

    Branch ``"doubling"`` fires when ``C >= C0 |log eps|^sigma``: the ball sits
    at the largest-ratio center of ``Omega(rho1)`` and the bound is
    ``M^2 (C0/C_loc)^(2/H1)``. Otherwise branch ``"dyadic"`` uses the ball
    inscribed in ``Q0`` with the propagated cube bound. ``C`` overrides the
    measured doubling constant.
    """
    grid = u.grid
    domain = box_domain(grid) if domain is None else domain
    M = norm_on_region(u, domain, 2)
    if M > 1 + 1e-9:
        raise PreconditionError("|u|_{L2(Omega)} <= 1 required")
    if E.is_empty:
        raise PreconditionError("E has measure zero")
    mean = math.sqrt(float(np.sum(u.u[E.mask] ** 2)) * grid.cell_volume / E.measure)
    if mean > epsilon * (1 + 1e-12):
        raise PreconditionError("|u|_{L2(E)} |E|^(-1/2) <= eps required")
    env = log_envelope(epsilon, profile)
    inner = inner_region(domain, rho1)
    if inner.is_empty:
        raise PreconditionError("Omega(rho1) is empty")
    small = 2 * profile.kappa * rho1
    if epsilon >= profile.eps0:
        pts, _, mass = _ratio_scan(u, inner, rho1, small)
        i = int(np.argmin(mass))
        bound = max(profile.trivial_A * env, M**2)
        return SmallBall(tuple(pts[i]), small, bound, float(mass[i]), "none", "trivial", math.nan, env)
    if C is None:
        C = doubling_constant(u, rho1, profile, domain).C
    if C >= profile.C0 * abs(math.log(epsilon)) ** profile.sigma:
        pts, ratio, mass = _ratio_scan(u, inner, rho1, small)
        i = int(np.argmax(ratio))
        C_loc = profile.C0 * float(ratio[i]) ** profile.H1
        bound = M**2 * (profile.C0 / C_loc) ** (2 / profile.H1)
        return SmallBall(
            tuple(pts[i]), small, bound, float(mass[i]), "doubling", "main", C, env,
            {"C_local": C_loc, "M": M},
        )
    init = select_initial_family(u, E, rho1, epsilon, profile, domain, C)
    if not init.family.paths:
        raise PreconditionError("no beta-filled cube found in Q0")
    beta = min(max(init.beta, 1e-12), 1 - 1e-15)
    ledger = GoodnessLedger(init.Q0, init.D, beta, epsilon)
    prop = propagate_goodness(ledger, init.family, u)
    center = init.Q0.center
    radius = init.Q0.side / 2
    measured = ball_l2(u, center, radius, False) ** 2
    return SmallBall(
        center, radius, prop.certified, measured, "dyadic", "main", C, env,
        {
            "N": prop.N,
            "D": init.D,
            "beta": init.beta,
            "goodness_violations": len(prop.violations) + len(init.violations),
            "Q0_measured": prop.measured,
        },
    )


@dataclass
class PropagationReport:
    epsilon: float
    epsilon_mean: float
    E_measure: float
    rho: float
    ball: SmallBall
    step_r: float
    step_R: float
    alpha: float
    C7: float
    chain_steps: int
    n_targets: int
    log_b0: float
    leaf_log_bound: float
    phi: float
    exponent: float
    measured: float
    step_violations: int
    worst_chain: list = field(default_factory=list)

    @property
    def dominates(self) -> bool:
        return self.phi >= self.measured

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "ball"}
        d["ball"] = self.ball.to_dict()
        d["dominates"] = self.dominates
        return d


def phi_estimate(
    u: SolutionField,
    E: RegionMask,
    rho: float,
    epsilon: float,
    profile: ConstantsProfile,
    domain: RegionMask | None = None,
    C7: float | None = None,
    M_bound: float = 1.0,
    ratio: float = 2.5,
    slack: float = 1.01,
) -> PropagationReport:
    """Certified bound on ``|u|_{L2(Omega(rho))}`` from ``|u|_{L2(E)} <= eps``.

    Composes the small-ball step, a covering tree of ``Omega(rho)`` by balls
    of the chain radius, and the three-sphere recurrence along each tree path.
    Chain bounds are absolute ball norms: the radius-normalized inequality
    with constant ``C7`` becomes ``|u|_{B_r(next)} <= C7 (R/r) (r/rho)^alpha
    M^alpha b^(1-alpha)`` with ``M = M_bound``. ``phi = sqrt(#balls) * max leaf bound``.
    """
    grid = u.grid
    domain = box_domain(grid) if domain is None else domain
    omega_rho = inner_region(domain, rho)
    if E.is_empty:
        raise PreconditionError("E has measure zero")
    if not E.issubset(omega_rho):
        raise PreconditionError("E must lie in Omega(rho)")
    e_norm = math.sqrt(float(np.sum(u.u[E.mask] ** 2)) * grid.cell_volume)
    if e_norm > epsilon * (1 + 1e-12):
        raise PreconditionError("|u|_{L2(E)} <= eps required")
    if norm_on_region(u, domain, 2) > M_bound * (1 + 1e-9):
        raise PreconditionError("|u|_{L2(Omega)} <= 1 required")
    eps_mean = epsilon / math.sqrt(E.measure)
    ball = find_small_ball(u, E, rho, eps_mean, profile, domain)
    geom = chain_step_geometry(rho, profile, r_cap=ball.radius, ratio=ratio, slack=slack)
    alpha = alpha_exponent(geom.r, geom.R, rho, profile)
    C7 = profile.C7 if C7 is None else C7
    C_abs = C7 * (geom.R / geom.r) * (geom.r / rho) ** alpha
    b0_sq = ball.certified
    if ball.regime == "main":
        b0_sq = max(b0_sq, ball.envelope)
    # the chain ball sits inside the small ball, so its mass is bounded by b0_sq
    log_M = math.log(M_bound)
    log_b0 = min(0.5 * math.log(b0_sq), log_M)
    tree = plan_chain(omega_rho, ball.center, r=geom.r, rho=rho, cover_all=True)
    worst_log = -math.inf
    violations = 0
    worst_chain: list = []
    for chain in tree.chains:
        logs = propagate_chain(1.0, 1.0, chain, alpha, C_abs, log_bound0=log_b0 - log_M).log_bounds
        logs = [v + log_M for v in logs]
        for c, lb in zip(chain.centers, logs):
            measured = ball_l2(u, c, geom.r, False)
            if measured > 0 and math.log(measured) > lb + 1e-9:
                violations += 1
        if logs[-1] > worst_log:
            worst_log = logs[-1]
            worst_chain = [list(c) for c in chain.centers]
    n_t = len(tree.targets)
    phi = math.sqrt(n_t) * math.exp(worst_log)
    J = max(c.steps for c in tree.chains)
    exponent = (profile.sigma / profile.H1) * (1 - alpha) ** J
    measured = norm_on_region(u, omega_rho, 2)
    return PropagationReport(
        epsilon, eps_mean, E.measure, rho, ball, geom.r, geom.R, alpha, C7, J, n_t,
        log_b0, worst_log, phi, exponent, measured, violations, worst_chain,
    )
