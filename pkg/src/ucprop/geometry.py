"""Uniform grids, region masks, balls and distance geometry.

Every measure here is a node-count proxy: a set of grid nodes ``S`` has
measure ``len(S) * h**dim``. Balls are closed node sets ``{x : |x - c| <= r}``
without partial-cell corrections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal
from scipy.spatial import cKDTree

from .errors import PreconditionError, ResolutionError

# masks below this size use the kd-tree distance path
BRUTE_FORCE_LIMIT = 100_000
_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``origin + h * index`` with ``counts`` nodes per axis."""

    dim: int
    h: float
    counts: tuple[int, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.counts) != self.dim or len(self.origin) != self.dim:
            raise ValueError("counts and origin must have one entry per axis")
        if min(self.counts) < 9:
            raise ValueError("grid needs at least 9 nodes per axis")
        if not self.h > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def cube(cls, dim: int, n: int, lo: float = 0.0, hi: float = 1.0) -> "Grid":
        return cls(dim, (hi - lo) / (n - 1), (n,) * dim, (lo,) * dim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(self.h * (c - 1) for c in self.counts)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def box_volume(self) -> float:
        return math.prod(self.extents)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + e for o, e in zip(self.origin, self.extents))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.h * np.arange(self.counts[i])

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        return list(np.ix_(*(self.axis(i) for i in range(self.dim))))

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(c, self.shape) for c in self.coords()]

    def node_index(self, point) -> tuple[int, ...]:
        p = np.asarray(point, dtype=float)
        idx = np.rint((p - np.asarray(self.origin)) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.counts)):
            raise PreconditionError(f"point {tuple(p)} lies outside the grid box")
        return tuple(int(i) for i in idx)

    def node_point(self, index) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(index, dtype=float)

    def snap(self, point) -> np.ndarray:
        return self.node_point(self.node_index(point))

    def window(self, center, radius: float):
        """Index window covering the closed ball; returns (slices, offsets, truncated).

        ``offsets`` are broadcastable arrays of ``x - center`` per axis.
        """
        c = np.asarray(center, dtype=float)
        slices, offsets, truncated = [], [], False
        for i in range(self.dim):
            lo = math.ceil((c[i] - radius - self.origin[i]) / self.h - _TOL)
            hi = math.floor((c[i] + radius - self.origin[i]) / self.h + _TOL)
            if lo < 0 or hi > self.counts[i] - 1:
                truncated = True
            lo, hi = max(lo, 0), min(hi, self.counts[i] - 1)
            slices.append(slice(lo, hi + 1))
            shape = [1] * self.dim
            shape[i] = max(hi - lo + 1, 0)
            offsets.append((self.origin[i] + self.h * np.arange(lo, hi + 1) - c[i]).reshape(shape))
        return tuple(slices), offsets, truncated


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


def ball_window(grid: Grid, center, radius: float):
    """(slices, local boolean mask, truncated) for the closed node ball."""
    slices, offsets, truncated = grid.window(center, radius)
    d2 = sum(o**2 for o in offsets)
    return slices, d2 <= radius * radius + _TOL * grid.h**2, truncated


def ball_kernel(grid: Grid, radius: float) -> np.ndarray:
    """Boolean stencil of lattice offsets within ``radius``; odd size per axis."""
    m = int(math.floor(radius / grid.h + _TOL))
    ax = grid.h * np.arange(-m, m + 1)
    d2 = sum(a**2 for a in np.ix_(*([ax] * grid.dim)))
    return d2 <= radius * radius + _TOL * grid.h**2


def ball_sums(grid: Grid, values: np.ndarray, radius: float) -> np.ndarray:
    """Sum of ``values`` over the node ball of ``radius`` around every node.

    Computed by FFT convolution; nodes whose ball leaves the grid only see the
    in-grid part.
    """
    kern = ball_kernel(grid, radius).astype(float)
    out = signal.fftconvolve(values, kern, mode="same")
    return np.maximum(out, 0.0) if np.all(values >= 0) else out


def ball_sums_at(grid: Grid, values: np.ndarray, radius: float, mask: np.ndarray) -> np.ndarray:
    """:func:`ball_sums` restricted to the ``True`` nodes of ``mask``, in C order.

    Only the bounding box of ``mask`` widened by the radius is convolved.
    """
    idx = np.argwhere(mask)
    if idx.size == 0:
        return np.zeros(0)
    m = int(math.floor(radius / grid.h + _TOL))
    lo = np.maximum(idx.min(axis=0) - m, 0)
    hi = np.minimum(idx.max(axis=0) + m + 1, grid.counts)
    crop = tuple(slice(a, z) for a, z in zip(lo, hi))
    sums = ball_sums(grid, values[crop], radius)
    return sums[mask[crop]]


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Set of grid nodes; measure is node count times ``h**dim``."""

    grid: Grid
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != self.grid.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def measure(self) -> float:
        return self.count * self.grid.cell_volume

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.mask & other.mask)

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.mask | other.mask)

    def __sub__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.mask & ~other.mask)

    def __eq__(self, other):
        return (
            isinstance(other, RegionMask)
            and self.grid == other.grid
            and np.array_equal(self.mask, other.mask)
        )

    __hash__ = None

    def complement(self) -> "RegionMask":
        return RegionMask(self.grid, ~self.mask)

    def issubset(self, other: "RegionMask") -> bool:
        return not np.any(self.mask & ~other.mask)

    def contains(self, point) -> bool:
        try:
            idx = self.grid.node_index(point)
        except PreconditionError:
            return False
        return bool(self.mask[idx])

    def nodes(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def points(self) -> np.ndarray:
        return np.asarray(self.grid.origin) + self.grid.h * self.nodes()


def full_region(grid: Grid) -> RegionMask:
    return RegionMask(grid, np.ones(grid.shape, dtype=bool))


def box_domain(grid: Grid) -> RegionMask:
    """Open box: all nodes except the boundary layer that carries Dirichlet data."""
    m = np.zeros(grid.shape, dtype=bool)
    m[(slice(1, -1),) * grid.dim] = True
    return RegionMask(grid, m)


def ball_region(grid: Grid, center, radius: float) -> RegionMask:
    m = np.zeros(grid.shape, dtype=bool)
    slices, local, _ = ball_window(grid, center, radius)
    m[slices] = local
    return RegionMask(grid, m)


def region_from_function(grid: Grid, predicate) -> RegionMask:
    return RegionMask(grid, np.broadcast_to(predicate(*grid.coords()), grid.shape))


def boundary_distance(region: RegionMask, method: str = "auto") -> np.ndarray:
    """Euclidean distance from each node to the nearest node outside ``region``.

    Nodes beyond the grid box count as outside. ``method`` is ``"kdtree"``
    (exact nearest-neighbour query), ``"edt"`` (exact two-pass Euclidean
    distance transform) or ``"auto"``.
    """
    grid = region.grid
    padded = np.pad(region.mask, 1, constant_values=False)
    if method == "auto":
        method = "kdtree" if padded.size < BRUTE_FORCE_LIMIT else "edt"
    if method == "edt":
        dist = ndimage.distance_transform_edt(padded, sampling=grid.h)
    elif method == "kdtree":
        dist = np.zeros(padded.shape)
        inside = np.argwhere(padded)
        outside = np.argwhere(~padded)
        if len(inside):
            d, _ = cKDTree(outside).query(inside)
            dist[tuple(inside.T)] = d * grid.h
    else:
        raise ValueError(f"unknown distance method {method!r}")
    return dist[(slice(1, -1),) * grid.dim]


def distance_to_set(region: RegionMask) -> np.ndarray:
    """Distance from every grid node to the nearest node of ``region``."""
    if region.is_empty:
        return np.full(region.grid.shape, np.inf)
    return ndimage.distance_transform_edt(~region.mask, sampling=region.grid.h)


def inner_region(domain: RegionMask, rho: float, method: str = "auto") -> RegionMask:
    """Nodes of ``domain`` farther than ``4 * rho`` from its discrete boundary."""
    if not rho > 0:
        raise PreconditionError("rho must be positive")
    if domain.is_empty:
        raise PreconditionError("domain is empty")
    dist = boundary_distance(domain, method)
    return RegionMask(domain.grid, domain.mask & (dist > 4.0 * rho))


def box_inner_distance(grid: Grid, point) -> float:
    """Distance from ``point`` to the boundary layer of :func:`box_domain`."""
    p = np.asarray(point, dtype=float)
    return float(min(np.min(p - np.asarray(grid.origin)), np.min(np.asarray(grid.upper) - p)))


def dyadic_radii(r1: float, floor: float) -> list[float]:
    radii = []
    r = r1
    while r >= floor * (1 - 1e-12):
        radii.append(r)
        r /= 2.0
    return radii


def density_subset(region: RegionMask, gamma: float, r1: float) -> RegionMask:
    """Nodes of ``region`` whose balls at every dyadic radius ``r1, r1/2, ... >= 4h``
    are filled by ``region`` in fraction strictly above ``gamma``."""
    grid = region.grid
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    if r1 < 4 * grid.h:
        raise ResolutionError("resolution exhausted: r1 below 4h")
    keep = region.mask.copy()
    vals = region.mask.astype(float)
    for r in dyadic_radii(r1, 4 * grid.h):
        kern = ball_kernel(grid, r)
        counts = np.rint(signal.fftconvolve(vals, kern.astype(float), mode="same"))
        keep &= counts > gamma * np.count_nonzero(kern)
    return RegionMask(grid, keep)


@dataclass
class HProfile:
    """Table of ``h(r) = max_{|y|=r} dist(x0 + y, F1)`` over shells of width ``2h``."""

    x0: tuple[float, ...]
    radii: np.ndarray
    values: np.ndarray
    levels: dict[int, float]
    truncated: bool

    def at(self, r: float) -> float:
        i = int(np.argmin(np.abs(self.radii - r)))
        return float(self.values[i])


def _radial_window(region: RegionMask, x0, r_max: float, field: np.ndarray):
    grid = region.grid
    slices, offsets, truncated = grid.window(x0, r_max + grid.h)
    rad = np.sqrt(sum(o**2 for o in offsets))
    return rad, field[slices], truncated


def _require_member(region: RegionMask, x0) -> np.ndarray:
    grid = region.grid
    p = np.asarray(x0, dtype=float)
    snapped = grid.snap(p)
    if np.max(np.abs(snapped - p)) > 1e-6 * grid.h or not region.contains(p):
        raise PreconditionError(f"x0={tuple(p)} is not a node of the set")
    return snapped


def h_profile(set_f1: RegionMask, x0, r_max: float, radii=None) -> HProfile:
    """Sphere-to-set distance profile around ``x0``.

    ``radii`` defaults to all multiples of ``h`` up to ``r_max``. ``levels``
    maps ``l`` to ``h_l = max_{r in (2^{-l-1}, 2^{-l}]} h(r)`` for every dyadic
    band that fits in ``[h, r_max]``.
    """
    grid = set_f1.grid
    x0 = _require_member(set_f1, x0)
    dist = distance_to_set(set_f1)
    rad, d, truncated = _radial_window(set_f1, x0, r_max, dist)
    if radii is None:
        radii = grid.h * np.arange(1, int(math.floor(r_max / grid.h + _TOL)) + 1)
    radii = np.asarray(radii, dtype=float)
    vals = np.array([_shell_max(rad, d, r, grid.h) for r in radii])
    levels = {}
    l = max(0, int(math.floor(-math.log2(r_max))))
    while 2.0 ** (-l - 1) >= grid.h:
        if 2.0**-l <= r_max + _TOL:
            sel = (rad > 2.0 ** (-l - 1) - grid.h) & (rad <= 2.0**-l + grid.h)
            levels[l] = float(d[sel].max()) if np.any(sel) else 0.0
        l += 1
    return HProfile(tuple(x0), radii, vals, levels, truncated)


def _shell_max(rad, values, r, h) -> float:
    sel = np.abs(rad - r) <= h + _TOL * h
    return float(values[sel].max()) if np.any(sel) else 0.0


@dataclass
class MarcinkiewiczResult:
    value: float
    h: float
    covered: bool


def marcinkiewicz_integral(set_f1: RegionMask, x0, radius: float = 1.0) -> MarcinkiewiczResult:
    """Midpoint quadrature of ``int_{|y|<=radius} dist(x0+y, F1) / |y|^(n+1) dy``.

    The cell at ``y = 0`` is excluded. ``covered`` is False when the ball around
    ``x0`` leaves the grid box.
    """
    grid = set_f1.grid
    x0 = _require_member(set_f1, x0)
    dist = distance_to_set(set_f1)
    rad, d, truncated = _radial_window(set_f1, x0, radius, dist)
    sel = (rad > 0.5 * grid.h) & (rad <= radius + _TOL * grid.h)
    integrand = d[sel] / rad[sel] ** (grid.dim + 1)
    value = float(np.sum(np.sort(integrand)) * grid.cell_volume)
    return MarcinkiewiczResult(value, grid.h, not truncated)


@dataclass
class GoodScaleCensus:
    good: list[int]
    blocks: dict[int, tuple[int, int]]


def good_scales(h_levels, n: int, l_range) -> GoodScaleCensus:
    """Levels ``l`` with ``h_l < l^{-1/(n+1)} 2^{-l}`` plus per-block counts.

    ``h_levels`` is a mapping or callable ``l -> h_l``. ``blocks[N]`` is
    ``(good count, block size)`` for the block ``{2^N+1, ..., 2^{N+1}}`` when
    it lies inside ``l_range``.
    """
    get = h_levels if callable(h_levels) else h_levels.__getitem__
    ls = [l for l in l_range if l >= 1]
    good = [l for l in ls if get(l) < l ** (-1.0 / (n + 1)) * 2.0 ** (-l)]
    present, goodset = set(ls), set(good)
    blocks = {}
    N = 0
    while 2**N + 1 <= max(ls, default=0):
        block = range(2**N + 1, 2 ** (N + 1) + 1)
        if all(l in present for l in block):
            blocks[N] = (sum(1 for l in block if l in goodset), len(block))
        N += 1
    return GoodScaleCensus(good, blocks)
