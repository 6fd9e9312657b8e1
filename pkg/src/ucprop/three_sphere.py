"""Three-sphere interpolation: exponent, per-instance constants, and ball chains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .constants import ConstantsProfile
from .errors import DisconnectedError, DomainError, PreconditionError, ResolutionError
from .geometry import RegionMask, ball_kernel
from .metrology import ball_l2, ball_values, elliptic_candidate
from .solver import SolutionField

_TOL = 1e-9


def alpha_formula(r: float, R: float, rho: float, H0: float, b0: float) -> float:
    """``2 H0 log(2R/r) / (2 H0 log(2R/r) + log(rho / (2 b0 R)))``; needs both logs positive."""
    if not 2 * R > r:
        raise DomainError(f"2R > r required (r={r:g}, R={R:g})")
    if not 2 * b0 * R < rho:
        raise DomainError(f"2 b0 R < rho required (b0={b0:g}, R={R:g}, rho={rho:g})")
    l = 2 * H0 * math.log(2 * R / r)
    m = math.log(rho / (2 * b0 * R))
    return l / (l + m)


def alpha_exponent(r: float, R: float, rho: float, profile: ConstantsProfile) -> float:
    """Interpolation exponent of the three-sphere inequality under its radius constraints."""
    if not 2 * r < R:
        raise DomainError(f"2r < R required (r={r:g}, R={R:g})")
    return alpha_formula(r, R, rho, profile.H0, profile.b0)


@dataclass
class ThreeSphereRecord:
    center: tuple[float, ...]
    r: float
    R: float
    rho: float
    sigma: float
    M: float
    mid: float
    alpha: float
    needed_constant: float
    floors: list[str] = field(default_factory=list)
    norm: str = "L2"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["floors"] = ";".join(self.floors)
        return d


def _check_geometry(u: SolutionField, x, r, R, rho, profile: ConstantsProfile, omega_rho: RegionMask | None):
    if not 2 * r < R:
        raise DomainError("2r < R required")
    if not R < profile.kappa * rho:
        raise DomainError("R < kappa * rho required")
    if not rho < profile.rho0:
        raise DomainError("rho < rho0 required")
    if r < 2 * u.grid.h * (1 - 1e-9):
        raise ResolutionError("resolution exhausted: ball thinner than 4 cells")
    if omega_rho is not None and not omega_rho.contains(x):
        raise PreconditionError(f"center {tuple(x)} is not in Omega(rho)")


def _floors(u: SolutionField, radii: dict) -> list[str]:
    """Names of balls resolved by fewer than 6 cells across."""
    return [k for k, v in radii.items() if v < 3 * u.grid.h * (1 - 1e-9)]


def verify_three_sphere(
    u: SolutionField,
    x,
    r: float,
    R: float,
    rho: float,
    profile: ConstantsProfile,
    omega_rho: RegionMask | None = None,
) -> ThreeSphereRecord:
    """Smallest constant with ``R^-1 |u|_{B_R} <= C M^alpha sigma^(1-alpha)`` at this instance."""
    _check_geometry(u, x, r, R, rho, profile, omega_rho)
    alpha = alpha_exponent(r, R, rho, profile)
    sigma = ball_l2(u, x, r) / r
    M = ball_l2(u, x, rho) / rho
    mid = ball_l2(u, x, R) / R
    needed = _needed(mid, M, sigma, alpha)
    return ThreeSphereRecord(
        tuple(x), r, R, rho, sigma, M, mid, alpha, needed, _floors(u, {"r": r, "R": R, "rho": rho})
    )


def _needed(mid: float, M: float, sigma: float, alpha: float) -> float:
    if mid == 0:
        return 0.0
    if M == 0 or sigma == 0:
        return math.inf
    return math.exp(math.log(mid) - alpha * math.log(M) - (1 - alpha) * math.log(sigma))


def linf_three_sphere(
    u: SolutionField,
    x,
    r: float,
    R: float,
    rho: float,
    profile: ConstantsProfile,
    omega_rho: RegionMask | None = None,
) -> ThreeSphereRecord:
    """Sup-norm version; ball maxima are used without radius normalization."""
    _check_geometry(u, x, r, R, rho, profile, omega_rho)
    alpha = alpha_exponent(r, R, rho, profile)
    sigma = float(np.abs(ball_values(u, x, r)).max())
    M = float(np.abs(ball_values(u, x, rho)).max())
    mid = float(np.abs(ball_values(u, x, R)).max())
    return ThreeSphereRecord(
        tuple(x), r, R, rho, sigma, M, mid, alpha, _needed(mid, M, sigma, alpha),
        _floors(u, {"r": r, "R": R, "rho": rho}), "Linf",
    )


@dataclass
class ConversionCheck:
    linf_needed: float
    l2_needed: float
    A: float
    geometry: float
    passed: bool


def linf_l2_agreement(u: SolutionField, x, r: float, R: float, rho: float, profile: ConstantsProfile) -> ConversionCheck:
    """Check ``needed_inf <= A * needed_L2(r, 2R, rho; alpha) * G``.

    ``A`` is the local sup-versus-mean-square constant at ``(x, R)`` and ``G``
    collects the ball-measure factors relating sup and L2 norms.
    """
    rec = linf_three_sphere(u, x, r, R, rho, profile)
    alpha = rec.alpha
    grid = u.grid
    meas = lambda t: float(np.count_nonzero(ball_kernel(grid, t))) * grid.cell_volume
    sigma2 = ball_l2(u, x, r) / r
    M2 = ball_l2(u, x, rho) / rho
    mid2 = ball_l2(u, x, 2 * R) / (2 * R)
    l2_needed = _needed(mid2, M2, sigma2, alpha)
    A = elliptic_candidate(u, x, R)
    G = (2 * R) * meas(2 * R) ** -0.5 * (meas(rho) ** 0.5 / rho) ** alpha * (meas(r) ** 0.5 / r) ** (1 - alpha)
    passed = rec.needed_constant <= A * l2_needed * G * (1 + 1e-9)
    return ConversionCheck(rec.needed_constant, l2_needed, A, G, passed)


# harmonic oracle


def shell_mean_square(u: SolutionField, x, t: float) -> float:
    """Mean of ``u^2`` over nodes with ``| |y - x| - t | <= h``."""
    grid = u.grid
    slices, offsets, truncated = grid.window(x, t + grid.h)
    if truncated:
        raise PreconditionError("shell leaves the grid box")
    rad = np.sqrt(sum(o**2 for o in offsets))
    sel = np.abs(rad - t) <= grid.h * (1 + _TOL)
    vals = u.u[slices][sel]
    return float(np.mean(vals**2))


@dataclass
class LogConvexityCheck:
    r: float
    R: float
    rho: float
    weight_small: float
    mid: float
    interpolant: float
    ratio: float
    passed: bool


def log_convexity_check(u: SolutionField, x, r: float, R: float, rho: float, slack: float = 0.05) -> LogConvexityCheck:
    """Sphere norms of a harmonic function are log-convex in ``log t``.

    Verifies ``S(R) <= (1 + slack) S(r)^w S(rho)^(1-w)`` with
    ``w = log(rho/R) / log(rho/r)`` and ``S`` the root-mean-square on the sphere.
    """
    if not r < R < rho:
        raise DomainError("r < R < rho required")
    w = math.log(rho / R) / math.log(rho / r)
    s_r, s_R, s_rho = (math.sqrt(shell_mean_square(u, x, t)) for t in (r, R, rho))
    interp = s_r**w * s_rho ** (1 - w)
    ratio = s_R / interp if interp > 0 else math.inf
    return LogConvexityCheck(r, R, rho, w, s_R, interp, ratio, ratio <= 1 + slack)


# chains


@dataclass
class BallChain:
    centers: list[tuple[float, ...]]
    r: float
    rho: float
    grid_path_length: float = 0.0

    def __len__(self):
        return len(self.centers)

    @property
    def steps(self) -> int:
        return len(self.centers) - 1

    def spacings(self) -> list[float]:
        c = np.asarray(self.centers)
        return [float(np.linalg.norm(c[i + 1] - c[i])) for i in range(len(c) - 1)]

    def to_dict(self) -> dict:
        return {"centers": [list(c) for c in self.centers], "r": self.r, "rho": self.rho}


@dataclass
class CoverTree:
    start: tuple[float, ...]
    r: float
    rho: float
    targets: list[tuple[float, ...]]
    chains: list[BallChain]

    @property
    def worst(self) -> BallChain:
        return max(self.chains, key=len)

    def to_dict(self) -> dict:
        return {"start": list(self.start), "r": self.r, "rho": self.rho, "chains": [c.to_dict() for c in self.chains]}


class _RegionGraph:
    def __init__(self, region: RegionMask):
        grid = region.grid
        self.region = region
        self.nodes = region.nodes()
        self.index = -np.ones(grid.shape, dtype=np.int64)
        self.index[tuple(self.nodes.T)] = np.arange(len(self.nodes))
        rows, cols, w = [], [], []
        offsets = [o for o in np.ndindex(*(3,) * grid.dim) if any(v != 1 for v in o)]
        for o in offsets:
            d = np.asarray(o) - 1
            nb = self.nodes + d
            ok = np.all((nb >= 0) & (nb < np.asarray(grid.shape)), axis=1)
            j = np.full(len(nb), -1)
            j[ok] = self.index[tuple(nb[ok].T)]
            good = j >= 0
            rows.append(np.flatnonzero(good))
            cols.append(j[good])
            w.append(np.full(good.sum(), grid.h * float(np.linalg.norm(d))))
        n = len(self.nodes)
        self.graph = coo_matrix(
            (np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()

    def node_of(self, point) -> int:
        idx = self.region.grid.node_index(point)
        i = int(self.index[idx])
        if i < 0:
            raise PreconditionError(f"point {tuple(point)} is not in the region")
        return i

    def point(self, i: int) -> tuple[float, ...]:
        return tuple(self.region.grid.node_point(self.nodes[i]))


def region_components(region: RegionMask) -> list[int]:
    structure = ndimage.generate_binary_structure(region.grid.dim, region.grid.dim)
    labels, n = ndimage.label(region.mask, structure=structure)
    return [int(c) for c in np.bincount(labels.ravel())[1:]] if n else []


def _centers_along(path_pts: np.ndarray, r: float) -> list[int]:
    """Indices along a node path where centers are placed at straight-line spacing ~r."""
    keep = [0]
    last = path_pts[0]
    for i in range(1, len(path_pts)):
        if np.linalg.norm(path_pts[i] - last) >= r * (1 - 1e-9):
            prev = path_pts[i - 1]
            j = i
            if abs(np.linalg.norm(prev - last) - r) < abs(np.linalg.norm(path_pts[i] - last) - r) and i - 1 > keep[-1]:
                j = i - 1
            keep.append(j)
            last = path_pts[j]
    if keep[-1] != len(path_pts) - 1:
        keep.append(len(path_pts) - 1)
    return keep


def _path(pred: np.ndarray, src: int, dst: int) -> list[int]:
    out = [dst]
    while out[-1] != src:
        p = int(pred[out[-1]])
        if p < 0:
            raise DisconnectedError("target unreachable from start")
        out.append(p)
    return out[::-1]


def plan_chain(
    omega_rho: RegionMask,
    start,
    target=None,
    r: float = 0.1,
    rho: float = 0.0,
    cover_all: bool = False,
):
    """Shortest-path ball chain from ``start`` to ``target``, or a covering tree.

    Distances are Euclidean lengths of node paths through the region using
    the full ``3^n - 1`` neighbourhood. Centers are placed where the
    straight-line distance from the previous center first reaches ``r``; the
    final step to the target may be shorter.
    """
    if omega_rho.is_empty:
        raise PreconditionError("region is empty")
    comps = region_components(omega_rho)
    G = _RegionGraph(omega_rho)
    s = G.node_of(start)
    if cover_all and len(comps) > 1:
        raise DisconnectedError(f"region has {len(comps)} components of sizes {comps}", comps)
    dist, pred = dijkstra(G.graph, directed=False, indices=s, return_predecessors=True)
    pts = G.nodes * omega_rho.grid.h + np.asarray(omega_rho.grid.origin)
    if not cover_all:
        t = G.node_of(target if target is not None else start)
        if not np.isfinite(dist[t]):
            raise DisconnectedError(f"start and target lie in different components {comps}", comps)
        path = _path(pred, s, t)
        keep = _centers_along(pts[path], r)
        return BallChain([G.point(path[k]) for k in keep], r, rho, float(dist[t]))
    covered = np.zeros(len(G.nodes), dtype=bool)
    targets = []
    kern_r = r * (1 - 1e-9)
    for i in np.lexsort(G.nodes.T[::-1]):
        if covered[i]:
            continue
        targets.append(int(i))
        covered |= np.linalg.norm(pts - pts[i], axis=1) <= kern_r
    chains = []
    for t in targets:
        path = _path(pred, s, t)
        keep = _centers_along(pts[path], r)
        chains.append(BallChain([G.point(path[k]) for k in keep], r, rho, float(dist[t])))
    return CoverTree(G.point(s), r, rho, [G.point(t) for t in targets], chains)


@dataclass
class ChainBounds:
    log_bounds: list[float]
    closed_form: list[float]
    max_disagreement: float

    @property
    def final_log(self) -> float:
        return self.log_bounds[-1]

    @property
    def final(self) -> float:
        return math.exp(self.final_log)

    @property
    def bounds(self) -> list[float]:
        return [math.exp(v) for v in self.log_bounds]


def propagate_chain(bound0: float, M: float, steps, alpha: float, C7: float, log_bound0: float | None = None) -> ChainBounds:
    """Iterate ``b_{j+1} = C7 M^alpha b_j^(1-alpha)`` in log space.

    ``steps`` is an integer or a chain (its step count is used). The closed
    form ``log b_j = (1-(1-a)^j)/a log C7 + (1-(1-a)^j) log M + (1-a)^j log b0``
    must agree to ``1e-12`` relative.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha in (0, 1) required")
    J = steps if isinstance(steps, int) else steps.steps
    lb0 = math.log(bound0) if log_bound0 is None else float(log_bound0)
    lM = math.log(M)
    if lb0 > lM * (1 + 1e-12) + 1e-12:
        raise PreconditionError("bound0 <= M required")
    lC = math.log(C7)
    logs = [lb0]
    for _ in range(J):
        logs.append(lC + alpha * lM + (1 - alpha) * logs[-1])
    closed = []
    for j in range(J + 1):
        q = (1 - alpha) ** j
        closed.append((1 - q) / alpha * lC + (1 - q) * lM + q * lb0)
    dis = max(abs(a - b) / max(1.0, abs(b)) for a, b in zip(logs, closed))
    if dis > 1e-12:
        raise AssertionError(f"closed form disagrees with recurrence by {dis:.3g}")
    return ChainBounds(logs, closed, dis)


@dataclass(frozen=True)
class StepGeometry:
    """Radii of one chain step: small ``r``, middle ``R``, outer ``rho``."""

    r: float
    R: float
    rho: float

    @property
    def spread(self) -> float:
        return self.R / self.r


def chain_step_geometry(
    rho: float, profile: ConstantsProfile, r_cap: float | None = None, ratio: float = 2.5, slack: float = 1.01
) -> StepGeometry:
    """Largest admissible step: ``R = ratio * r`` with ``R = kappa * rho / slack``."""
    r = profile.kappa * rho / (ratio * slack)
    if r_cap is not None:
        r = min(r, r_cap)
    return StepGeometry(r, ratio * r, rho)
