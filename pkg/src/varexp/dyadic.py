"""Dyadic lattice, localized maximal operators, and coverings.

The lattice of a root box splits every axis in two per level.  All
estimates run on doubled cubes, so the root must satisfy 2*root inside the
grid domain; then 2Q stays inside the domain for every lattice cube Q.

The localized maximal operator of a cell field f at a cell center x is

    (M*_{root,s} f)(x) = sup over lattice cubes Q with x in closure(Q)
                         of (mean over 2Q of |f|^s)^{1/s},

and zero outside the root.  The lattice is truncated at a maximal level
(default: cubes no smaller than 2 grid cells per axis), which is the
resolution floor of every covering statement here.

A covering at height lam >= lam0 = mean_{2 root} F collects the maximal
lattice cubes whose doubled-cube average exceeds lam; each carries the
sandwich lam < mean_{2Q} F <= 2^n lam, obtained from the predecessor cube
through 3Q ⊂ 2Q^pre.  Good-lambda measurement compares the super-level
sets of M*F at kappa*lam against the smallness set of the data maximal
function.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Box, CellField, Grid, integrate, overlap_measure

__all__ = [
    "DyadicCube",
    "LevelSets",
    "CZCover",
    "GoodLambdaResult",
    "dyadic_lattice",
    "predecessor",
    "default_max_level",
    "default_kappa",
    "maximal_function",
    "level_sets",
    "cz_cover",
    "good_lambda_measure",
]


@dataclass(frozen=True)
class DyadicCube:
    root: Box
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        if len(self.index) != self.root.dim:
            raise ValueError("index dimension mismatch")
        if any(not (0 <= i < 2**self.level) for i in self.index):
            raise ValueError("index out of range for level")

    @property
    def box(self) -> Box:
        sides = self.root.sides / 2**self.level
        lo = np.asarray(self.root.lo) + np.asarray(self.index) * sides
        return Box(tuple(lo), tuple(lo + sides))

    def children(self) -> list["DyadicCube"]:
        out = []
        for bits in itertools.product((0, 1), repeat=self.root.dim):
            idx = tuple(2 * i + b for i, b in zip(self.index, bits))
            out.append(DyadicCube(self.root, self.level + 1, idx))
        return out


def predecessor(Q: DyadicCube) -> DyadicCube:
    """Parent cube one level up; the root has no predecessor."""
    if Q.level == 0:
        raise ValueError("root cube has no predecessor")
    return DyadicCube(Q.root, Q.level - 1, tuple(i // 2 for i in Q.index))


def dyadic_lattice(root: Box, max_level: int) -> list[DyadicCube]:
    """All lattice cubes of levels 0..max_level (root first, row-major)."""
    if max_level < 0:
        raise ValueError("max_level must be nonnegative")
    cubes = []
    for lev in range(max_level + 1):
        for idx in np.ndindex(*([2**lev] * root.dim)):
            cubes.append(DyadicCube(root, lev, tuple(int(i) for i in idx)))
    return cubes


def default_max_level(root: Box, grid: Grid) -> int:
    """Deepest level at which cubes still span >= 2 grid cells per axis."""
    h = grid.cell_size
    lev = min(
        int(math.floor(math.log2(root.sides[k] / (2.0 * h[k]) + 1e-12)))
        for k in range(grid.dim)
    )
    return max(lev, 0)


def default_kappa(c4: float, dim: int) -> float:
    """Good-lambda threshold factor 2^{n+1} c4 from the coercivity constant."""
    return 2.0 ** (dim + 1) * float(c4)


def _require_root(grid: Grid, root: Box) -> None:
    if root.dim != grid.dim:
        raise ValueError("root dimension does not match grid")
    if not grid.domain.contains_box(root.scaled(2.0)):
        raise ValueError("doubled root exits the grid domain")


def _level_axis_weights(grid: Grid, root: Box, level: int) -> list[np.ndarray]:
    """Per-axis overlap matrices W_k[(cube index, cell index)] between the
    doubled cubes 2Q at this level and the grid cells."""
    n_side = 2**level
    sides = root.sides / n_side
    h = grid.cell_size
    out = []
    for k in range(grid.dim):
        centers = root.lo[k] + sides[k] * (np.arange(n_side) + 0.5)
        lo2, hi2 = centers - sides[k], centers + sides[k]  # doubled interval
        left = grid.origin[k] + h[k] * np.arange(grid.cells[k])
        right = left + h[k]
        o = np.minimum(right[None, :], hi2[:, None]) - np.maximum(left[None, :], lo2[:, None])
        out.append(np.clip(o, 0.0, h[k]))
    return out


def _lattice_power_means(f: CellField, root: Box, s: float, max_level: int) -> list[np.ndarray]:
    """(mean over 2Q of |f|^s)^{1/s} for every lattice cube, per level.

    Returns a list indexed by level; entry L has shape (2^L,)*dim.
    """
    g = f.grid
    power = np.abs(f.values) ** s
    F = power.reshape(g.cells)
    means = []
    for lev in range(max_level + 1):
        W = _level_axis_weights(g, root, lev)
        if g.dim == 1:
            num = np.einsum("ac,c->a", W[0], F)
            den = W[0].sum(axis=1)
        elif g.dim == 2:
            num = np.einsum("ac,bd,cd->ab", W[0], W[1], F)
            den = np.multiply.outer(W[0].sum(axis=1), W[1].sum(axis=1))
        else:
            num = np.einsum("ac,bd,ef,cdf->abe", W[0], W[1], W[2], F)
            den = np.einsum("a,b,e->abe", W[0].sum(axis=1), W[1].sum(axis=1), W[2].sum(axis=1))
        means.append((num / den) ** (1.0 / s))
    return means


def maximal_function(f: CellField, root: Box, s: float = 1.0,
                     max_level: int | None = None) -> CellField:
    """Localized dyadic maximal function at cell centers; zero off the root.

    For each cell center the supremum runs over all lattice cubes whose
    closure contains it (ties on shared faces considered on both sides),
    of the s-power mean of |f| over the doubled cube.
    """
    g = f.grid
    _require_root(g, root)
    if s <= 0:
        raise ValueError("s must be positive")
    if f.values.ndim != 1:
        raise ValueError("maximal_function expects a scalar cell field")
    if max_level is None:
        max_level = default_max_level(root, g)
    means = _lattice_power_means(f, root, s, max_level)

    centers = g.cell_centers
    tol = 1e-12 * max(root.side, 1.0)
    in_root = np.all(centers >= np.asarray(root.lo) - tol, axis=1) & np.all(
        centers <= np.asarray(root.hi) + tol, axis=1
    )
    out = np.zeros(g.num_cells)
    pts = centers[in_root]
    best = np.zeros(pts.shape[0])
    for lev in range(max_level + 1):
        n_side = 2**lev
        sides = root.sides / n_side
        rel = (pts - np.asarray(root.lo)) / sides
        base = np.clip(np.floor(rel).astype(int), 0, n_side - 1)
        frac = rel - base
        ftol = tol / sides  # face tolerance in fraction units, per axis
        m = means[lev]
        for off in itertools.product((-1, 0, 1), repeat=g.dim):
            offs = np.asarray(off)
            cand = base + offs
            ok = np.ones(pts.shape[0], dtype=bool)
            for k in range(g.dim):
                if off[k] == -1:
                    ok &= (frac[:, k] <= ftol[k]) & (cand[:, k] >= 0)
                elif off[k] == 1:
                    ok &= (frac[:, k] >= 1.0 - ftol[k]) & (cand[:, k] <= n_side - 1)
            if not ok.any():
                continue
            vals = m[tuple(cand[ok].T)] if g.dim > 1 else m[cand[ok, 0]]
            best[ok] = np.maximum(best[ok], vals)
    out[in_root] = best
    return CellField(g, out)


@dataclass
class LevelSets:
    """Cell-center masks of the two good-lambda level sets."""

    lam: float
    kappa: float
    epsilon: float
    o_mask: np.ndarray  # {M* F > lam}
    u_mask: np.ndarray  # {M* F > kappa lam} ∩ {M*_{m0}(Gh) <= eps lam}
    cell_volume: float

    @property
    def o_measure(self) -> float:
        return float(self.o_mask.sum()) * self.cell_volume

    @property
    def u_measure(self) -> float:
        return float(self.u_mask.sum()) * self.cell_volume


def level_sets(F: CellField, Gh: CellField, lam: float, kappa: float,
               epsilon: float, m0: float, root: Box,
               max_level: int | None = None) -> LevelSets:
    """Build the super-level set of M*F and the data-smallness set."""
    if lam <= 0 or kappa < 1.0 or epsilon <= 0:
        raise ValueError("need lam > 0, kappa >= 1, epsilon > 0")
    mf = maximal_function(F, root, 1.0, max_level).values
    mg = maximal_function(Gh, root, m0, max_level).values
    return _build_level_sets(F.grid, mf, mg, lam, kappa, epsilon)


def _build_level_sets(grid: Grid, mf: np.ndarray, mg: np.ndarray,
                      lam: float, kappa: float, epsilon: float) -> LevelSets:
    o_mask = mf > lam
    u_mask = (mf > kappa * lam) & (mg <= epsilon * lam) & o_mask
    return LevelSets(lam, kappa, epsilon, o_mask, u_mask, grid.cell_volume)


@dataclass
class CZCover:
    lam: float
    lambda0: float
    cubes: list[DyadicCube]
    means: list[float]
    max_level: int
    truncated: bool  # some branch hit max_level while still above lam

    def boxes(self) -> list[Box]:
        return [q.box for q in self.cubes]


def cz_cover(F: CellField, root: Box, lam: float, lambda0: float | None = None,
             max_level: int | None = None) -> CZCover:
    """Maximal lattice cubes Q with mean_{2Q} F > lam, for lam >= lam0.

    Walks the lattice top-down, descending only through cubes whose doubled
    average is <= lam, so every returned cube is a proper sub-cube whose
    predecessor average is <= lam.  Each cube's average then satisfies the
    sandwich lam < mean_{2Q} F <= 2^n lam, which is asserted.
    """
    g = F.grid
    _require_root(g, root)
    if F.values.ndim != 1 or F.values.min() < 0:
        raise ValueError("covering needs a nonnegative scalar cell field")
    if max_level is None:
        max_level = default_max_level(root, g)
    if lambda0 is None:
        root2 = root.scaled(2.0)
        lambda0 = integrate(F, root2) / overlap_measure(g, root2)
    if lam < lambda0 * (1.0 - 1e-12):
        raise ValueError("below covering threshold")

    def mean2(q: DyadicCube) -> float:
        b2 = q.box.scaled(2.0)
        return integrate(F, b2) / overlap_measure(g, b2)

    cubes: list[DyadicCube] = []
    means: list[float] = []
    truncated = False
    stack = [DyadicCube(root, 0, (0,) * root.dim)]
    while stack:
        q = stack.pop()
        if q.level >= max_level:
            continue
        for child in q.children():
            m = mean2(child)
            if m > lam:
                cubes.append(child)
                means.append(m)
            else:
                stack.append(child)

    bound = 2.0**g.dim * lam
    for q, m in zip(cubes, means):
        assert m > lam * (1.0 - 1e-12), f"covering cube mean {m} not above {lam}"
        assert m <= bound * (1.0 + 1e-12), f"covering cube mean {m} exceeds 2^n lam = {bound}"
        if q.level == max_level:
            truncated = True
    return CZCover(float(lam), float(lambda0), cubes, means, max_level, truncated)


@dataclass
class GoodLambdaResult:
    kappa: float
    m0: float
    lambda0: float
    rows: list[tuple[float, float, float]]  # (epsilon, lam, delta)
    per_cube: dict[tuple[float, float], list[tuple[DyadicCube, float]]] = field(default_factory=dict)

    def delta(self, epsilon: float) -> float:
        vals = [d for (e, _, d) in self.rows if e == epsilon]
        return max(vals) if vals else 0.0


def good_lambda_measure(F: CellField, Gh: CellField, root: Box, kappa: float,
                        epsilons, lambdas, m0: float,
                        max_level: int | None = None) -> GoodLambdaResult:
    """Measure delta(eps, lam) = |U| / |O_lam| over an (eps, lam) table.

    O_lam = {M*F > lam} and U = {M*F > kappa lam, M*_{m0}(Gh) <= eps lam}.
    kappa must be at least 2^n.  Rows with empty O_lam report delta = 0.
    Per covering cube the local occupancy |Q_j ∩ U| / |Q_j| is recorded.
    """
    g = F.grid
    _require_root(g, root)
    if kappa < 2.0**g.dim:
        raise ValueError(f"kappa must be >= 2^n = {2.0**g.dim}")
    if max_level is None:
        max_level = default_max_level(root, g)
    mf = maximal_function(F, root, 1.0, max_level).values
    mg = maximal_function(Gh, root, m0, max_level).values
    root2 = root.scaled(2.0)
    lam0 = integrate(F, root2) / overlap_measure(g, root2)

    lambdas = [float(l) for l in lambdas]
    if any(l < lam0 * (1.0 - 1e-12) for l in lambdas):
        raise ValueError("below covering threshold")

    covers = {lam: cz_cover(F, root, lam, max_level=max_level) for lam in lambdas}
    centers = g.cell_centers
    vol = g.cell_volume

    rows = []
    per_cube: dict[tuple[float, float], list[tuple[DyadicCube, float]]] = {}
    for eps in (float(e) for e in epsilons):
        for lam in lambdas:
            ls = _build_level_sets(g, mf, mg, lam, kappa, eps)
            delta = ls.u_measure / ls.o_measure if ls.o_measure > 0 else 0.0
            rows.append((eps, lam, delta))
            entries = []
            for q in covers[lam].cubes:
                b = q.box
                inside = np.all(centers >= np.asarray(b.lo) - 1e-12, axis=1) & np.all(
                    centers <= np.asarray(b.hi) + 1e-12, axis=1
                )
                denom = inside.sum() * vol
                num = (inside & ls.u_mask).sum() * vol
                entries.append((q, num / denom if denom > 0 else 0.0))
            per_cube[(eps, lam)] = entries
    return GoodLambdaResult(float(kappa), float(m0), float(lam0), rows, per_cube)
