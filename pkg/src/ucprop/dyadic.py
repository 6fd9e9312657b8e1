"""Dyadic sub-cubes of a root cube, antichain families and the covering lemma.

Cubes are addressed by index paths ``(l_1, ..., l_r)`` with ``l_i`` in
``1..2**dim``; bit ``d`` of ``l - 1`` selects the upper half along axis ``d``.
Measures inside :func:`nadirashvili_step` are exact fractions of ``|Q0|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import ContractError, PreconditionError, ResolutionError
from .geometry import Grid, RegionMask

Path = tuple[int, ...]


@dataclass(frozen=True)
class Root:
    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.side > 0:
            raise ValueError("root side must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)


@dataclass(frozen=True)
class DyadicCube:
    root: Root
    path: Path = ()

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(l) for l in self.path))
        k = 2**self.root.dim
        if any(not 1 <= l <= k for l in self.path):
            raise ValueError(f"path entries must lie in 1..{k}")

    @property
    def dim(self) -> int:
        return self.root.dim

    @property
    def rank(self) -> int:
        return len(self.path)

    @property
    def side(self) -> float:
        return self.root.side * 2.0 ** (-self.rank)

    @property
    def center(self) -> tuple[float, ...]:
        c = list(self.root.center)
        s = self.root.side
        for l in self.path:
            s /= 2.0
            for d in range(self.dim):
                c[d] += s / 2.0 if (l - 1) >> d & 1 else -s / 2.0
        return tuple(c)

    @property
    def fraction(self) -> Fraction:
        """Exact measure relative to the root."""
        return Fraction(1, 2 ** (self.dim * self.rank))

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.root, self.path[:-1])

    def children(self) -> list["DyadicCube"]:
        return [DyadicCube(self.root, self.path + (l,)) for l in range(1, 2**self.dim + 1)]

    def contains(self, other: "DyadicCube") -> bool:
        return other.path[: self.rank] == self.path

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.side / 2, c + self.side / 2


def _is_prefix(a: Path, b: Path) -> bool:
    return len(a) <= len(b) and b[: len(a)] == a


def maximal_paths(paths) -> frozenset:
    """Drop every path that has a proper prefix in the collection."""
    ps = set(paths)
    return frozenset(p for p in ps if not any(p[:k] in ps for k in range(len(p))))


@dataclass(frozen=True)
class CubeFamily:
    """Antichain of dyadic cubes of one root (pairwise disjoint cubes)."""

    root: Root
    paths: frozenset

    def __post_init__(self):
        ps = frozenset(tuple(int(l) for l in p) for p in self.paths)
        object.__setattr__(self, "paths", ps)
        if maximal_paths(ps) != ps:
            raise ContractError("family is not an antichain: a cube contains another")

    @classmethod
    def of(cls, root: Root, paths) -> "CubeFamily":
        return cls(root, frozenset(tuple(p) for p in paths))

    @property
    def dim(self) -> int:
        return self.root.dim

    def cubes(self) -> list[DyadicCube]:
        return [DyadicCube(self.root, p) for p in sorted(self.paths, key=lambda p: (len(p), p))]

    @property
    def measure(self) -> Fraction:
        """|union| relative to |Q0|, exact."""
        return sum((Fraction(1, 2 ** (self.dim * len(p))) for p in self.paths), Fraction(0))

    @property
    def max_rank(self) -> int:
        return max((len(p) for p in self.paths), default=0)

    def is_full(self) -> bool:
        return self.measure == 1

    def __len__(self):
        return len(self.paths)


def _covered_fraction(paths, path: Path, dim: int) -> Fraction:
    """Exact |R ∩ E| / |R| for the cube R at ``path`` and E the union of ``paths``."""
    total = Fraction(0)
    for q in paths:
        if _is_prefix(q, path):
            return Fraction(1)
        if _is_prefix(path, q):
            total += Fraction(1, 2 ** (dim * (len(q) - len(path))))
    return total


@dataclass
class StepResult:
    family1: CubeFamily
    case: str
    closure: CubeFamily
    measure: Fraction
    measure1: Fraction


def nadirashvili_step(family: CubeFamily, beta: float) -> StepResult:
    """One application of the covering lemma.

    Finds the maximal dyadic cubes ``R`` with ``|R ∩ E| > beta |R|`` (``E`` the
    union of ``family``), replaces each by its dyadic parent and returns the
    resulting antichain ``F1`` together with the case tag: ``"II"`` when
    ``|E|/beta > |Q0|`` and ``E1 = Q0``, otherwise ``"I"``, in which case
    ``|E1| >= |E|/beta`` is enforced.
    """
    if not 0 < beta < 1:
        raise PreconditionError("beta must lie in (0, 1)")
    if not family.paths:
        raise PreconditionError("family must be nonempty")
    b = Fraction(beta)
    dim = family.dim
    paths = family.paths
    closure = set()
    stack: list[Path] = [()]
    while stack:
        p = stack.pop()
        frac = _covered_fraction(paths, p, dim)
        if frac > b:
            closure.add(p)
        elif frac > 0:
            stack.extend(p + (l,) for l in range(2**dim, 0, -1))
    parents = maximal_paths(p[:-1] for p in closure)
    fam1 = CubeFamily(family.root, parents)
    e, e1 = family.measure, fam1.measure
    if e / b > 1 and e1 == 1:
        case = "II"
    else:
        case = "I"
        if e1 < e / b:
            raise ContractError(f"covering lemma violated: |E1|={e1} < |E|/beta={e / b}")
    return StepResult(fam1, case, CubeFamily(family.root, frozenset(closure)), e, e1)


def bruteforce_step(family: CubeFamily, beta: float, max_rank: int | None = None):
    """Independent oracle for :func:`nadirashvili_step` by exhaustive enumeration.

    Works on the finest-level cell array: cells are ordered so every dyadic
    cube is a contiguous block, covered counts come from prefix sums, and the
    filled test compares integer counts. Returns ``(closure paths, family1
    cell mask, case)``.
    """
    dim = family.dim
    k = 2**dim
    L = max(family.max_rank, max_rank or 0)
    ncell = k**L
    cells = np.zeros(ncell, dtype=np.int64)

    def block(p: Path):
        start = 0
        for l in p:
            start = start * k + (l - 1)
        size = k ** (L - len(p))
        return start * size, (start + 1) * size

    for p in family.paths:
        a, z = block(p)
        cells[a:z] = 1
    csum = np.concatenate([[0], np.cumsum(cells)])
    b = Fraction(beta)
    filled = {}
    for r in range(L + 1):
        for p in product(range(1, k + 1), repeat=r):
            a, z = block(p)
            filled[p] = Fraction(int(csum[z] - csum[a]), z - a) > b
    closure = {p for p, f in filled.items() if f and not any(filled[p[:j]] for j in range(len(p)))}
    out = np.zeros(ncell, dtype=bool)
    for p in closure:
        a, z = block(p[:-1])
        out[a:z] = True
    e = Fraction(int(cells.sum()), ncell)
    e1 = Fraction(int(out.sum()), ncell)
    case = "II" if (e / b > 1 and e1 == 1) else "I"
    return frozenset(closure), out, case


def family_cells(family: CubeFamily, level: int) -> np.ndarray:
    """Boolean cell array at ``level`` (same ordering as :func:`bruteforce_step`)."""
    k = 2**family.dim
    out = np.zeros(k**level, dtype=bool)
    for p in family.paths:
        start = 0
        for l in p:
            start = start * k + (l - 1)
        size = k ** (level - len(p))
        out[start * size:(start + 1) * size] = True
    return out


@dataclass
class IterationTrace:
    N: int
    trace: list[CubeFamily]
    cases: list[str]


def default_step_budget(family1: CubeFamily, beta: float) -> int:
    e = float(family1.measure)
    return 10 * max(1, math.ceil(math.log(1.0 / e) / math.log(1.0 / beta)))


def iterate_families(family1: CubeFamily, beta: float, max_steps: int | None = None) -> IterationTrace:
    """Apply :func:`nadirashvili_step` until the union is the whole root.

    ``N`` counts step applications; an input already covering ``Q0`` gives
    ``N = 0``. Exceeding the budget signals a combinatorial bug.
    """
    budget = default_step_budget(family1, beta) if max_steps is None else max_steps
    trace, cases = [family1], []
    fam = family1
    while not fam.is_full():
        if len(cases) >= budget:
            raise ContractError(f"step budget {budget} exceeded before E_j = Q0")
        res = nadirashvili_step(fam, beta)
        fam = res.family1
        trace.append(fam)
        cases.append(res.case)
    return IterationTrace(len(cases), trace, cases)


# grid bridge


def cube_slices(grid: Grid, cube: DyadicCube) -> tuple[slice, ...]:
    """Half-open node index ranges ``[lo, hi)`` of the cube on the grid."""
    if cube.side < grid.h * (1 - 1e-9):
        raise ResolutionError("resolution exhausted: cube smaller than one grid cell")
    lo, hi = cube.bounds()
    out = []
    for d in range(grid.dim):
        a = math.ceil((lo[d] - grid.origin[d]) / grid.h - 1e-9)
        z = math.ceil((hi[d] - grid.origin[d]) / grid.h - 1e-9)
        if a < 0 or z > grid.counts[d]:
            raise PreconditionError("cube leaves the grid box")
        if z <= a:
            raise ResolutionError("resolution exhausted: cube contains no nodes")
        out.append(slice(a, z))
    return tuple(out)


def filled_ratio(cube: DyadicCube, region: RegionMask) -> float:
    """|cube ∩ set| / |cube| by node counting."""
    sl = cube_slices(region.grid, cube)
    block = region.mask[sl]
    return float(np.count_nonzero(block)) / block.size


def maximal_filled_cubes(root: DyadicCube, region: RegionMask, beta: float, max_rank: int) -> CubeFamily:
    """All maximal dyadic sub-cubes of rank <= ``max_rank`` with filled ratio > ``beta``."""
    if not 0 < beta < 1:
        raise PreconditionError("beta must lie in (0, 1)")
    return _maximal_by(root, region, lambda ratio: ratio > beta, max_rank)


def family_from_mask(root: DyadicCube, region: RegionMask, min_side_cells: float = 4.0) -> CubeFamily:
    """Maximal dyadic cubes lying entirely inside the mask, sides >= ``min_side_cells * h``."""
    h = region.grid.h
    max_rank = 0
    while root.side * 2.0 ** -(max_rank + 1) >= min_side_cells * h * (1 - 1e-9):
        max_rank += 1
    return _maximal_by(root, region, lambda ratio: ratio >= 1.0, max_rank)


def _maximal_by(root: DyadicCube, region: RegionMask, accept, max_rank: int) -> CubeFamily:
    if root.side * 2.0**-max_rank < region.grid.h * (1 - 1e-9):
        raise ResolutionError("resolution exhausted: max_rank finer than the grid")
    found = []
    stack = [root]
    while stack:
        c = stack.pop()
        ratio = filled_ratio(c, region)
        if accept(ratio):
            found.append(c.path[root.rank:])
        elif ratio > 0 and c.rank - root.rank < max_rank:
            stack.extend(reversed(c.children()))
    sub_root = Root(root.center, root.side)
    return CubeFamily(sub_root, frozenset(found))


def cube_as_root(cube: DyadicCube) -> Root:
    return Root(cube.center, cube.side)
