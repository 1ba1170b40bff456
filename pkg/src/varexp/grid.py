"""Uniform Cartesian grids, nodal/cell fields, and box quadrature.

Everything downstream computes on these types: scalar or vector fields
sampled at the nodes of a uniform grid over an axis-parallel box, their
multilinear (Q1) interpolants, per-cell gradients evaluated at cell
centers, and midpoint quadrature against arbitrary axis-parallel regions.
Cells that only partially overlap a region count by volume fraction, so
integrals are exactly additive over disjoint regions and monotone under
region inclusion for nonnegative integrands.

Conventions: dimension is 1, 2, or 3; all per-axis data is ordered
row-major (first axis slowest); node and cell arrays are flat with that
ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Box",
    "Grid",
    "GridFunction",
    "CellField",
    "make_grid",
    "gradient",
    "integrate",
    "mean_over",
    "overlap_measure",
    "region_weights",
]

# Relative tolerance for "point sits exactly on a face" decisions.
_GEOM_RTOL = 1e-12


def _as_floats(v, dim: int, name: str) -> tuple[float, ...]:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != dim:
        raise ValueError(f"{name} must have {dim} components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class Box:
    """Axis-parallel box given by its lower and upper corners."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = _as_floats(self.lo, len(tuple(self.lo)), "lo")
        hi = _as_floats(self.hi, len(lo), "hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box: lo={lo} hi={hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def side(self) -> float:
        """Longest edge; for cubes, the edge length."""
        return float(self.sides.max())

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    @property
    def measure(self) -> float:
        return float(np.prod(self.sides))

    def scaled(self, factor: float) -> "Box":
        """Concentric rescaling: same center, sides multiplied by factor."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        c, half = self.center, self.sides * (factor / 2.0)
        return Box(tuple(c - half), tuple(c + half))

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(tuple(lo), tuple(hi))

    def contains_point(self, x, tol: float | None = None) -> bool:
        """Closure membership, with a relative tolerance on each face."""
        x = np.asarray(x, dtype=float)
        if tol is None:
            tol = _GEOM_RTOL * max(self.side, 1.0)
        return bool(np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol))

    def contains_box(self, other: "Box", tol: float | None = None) -> bool:
        if tol is None:
            tol = _GEOM_RTOL * max(self.side, 1.0)
        return bool(
            np.all(np.asarray(other.lo) >= np.asarray(self.lo) - tol)
            and np.all(np.asarray(other.hi) <= np.asarray(self.hi) + tol)
        )


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on an axis-parallel box.

    ``cells`` counts cells per axis (at least 2 each); nodes per axis is
    ``cells + 1``.  The cell size per axis is derived, never stored.
    """

    dim: int
    origin: tuple[float, ...]
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2, or 3, got {self.dim}")
        origin = _as_floats(self.origin, self.dim, "origin")
        extent = _as_floats(self.extent, self.dim, "extent")
        if any(e <= 0 for e in extent):
            raise ValueError("extent components must be positive")
        cells = tuple(int(c) for c in np.asarray(self.cells).reshape(-1))
        if len(cells) != self.dim:
            raise ValueError(f"cells must have {self.dim} components")
        if any(c < 2 for c in cells):
            raise ValueError("need at least 2 cells per axis")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)

    # -- derived geometry -------------------------------------------------

    @property
    def cell_size(self) -> np.ndarray:
        return np.asarray(self.extent) / np.asarray(self.cells)

    @property
    def nodes_per_axis(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def domain(self) -> Box:
        return Box(self.origin, tuple(np.asarray(self.origin) + np.asarray(self.extent)))

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(num_nodes, dim) coordinates, row-major."""
        axes = [
            np.asarray(self.origin)[k] + self.cell_size[k] * np.arange(self.nodes_per_axis[k])
            for k in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """(num_cells, dim) cell-center coordinates, row-major."""
        axes = [
            np.asarray(self.origin)[k] + self.cell_size[k] * (np.arange(self.cells[k]) + 0.5)
            for k in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    @cached_property
    def corner_bits(self) -> np.ndarray:
        """(2**dim, dim) 0/1 array; row b holds the per-axis corner bits."""
        b = np.arange(2**self.dim)
        return np.stack([(b >> (self.dim - 1 - k)) & 1 for k in range(self.dim)], axis=1)

    @cached_property
    def cell_corner_indices(self) -> np.ndarray:
        """(num_cells, 2**dim) flat node indices of each cell's corners."""
        idx_axes = [np.arange(c) for c in self.cells]
        mesh = np.meshgrid(*idx_axes, indexing="ij")
        cell_idx = np.stack(mesh, axis=-1).reshape(-1, self.dim)  # (nc, d)
        corners = cell_idx[:, None, :] + self.corner_bits[None, :, :]  # (nc, 2^d, d)
        return np.ravel_multi_index(
            tuple(corners[..., k] for k in range(self.dim)), self.nodes_per_axis
        )

    @cached_property
    def grad_coefs(self) -> np.ndarray:
        """(2**dim, dim) coefficients of the Q1 cell-center gradient.

        The multilinear interpolant's gradient at the cell center is the
        signed corner average: coefficient ``(2 b_k - 1) / (2^{d-1} h_k)``
        for corner bit ``b_k`` on axis ``k``.
        """
        signs = 2.0 * self.corner_bits - 1.0
        return signs / (2.0 ** (self.dim - 1) * self.cell_size[None, :])

    @cached_property
    def boundary_node_mask(self) -> np.ndarray:
        """(num_nodes,) bool; True on the topological boundary."""
        mask = np.zeros(self.nodes_per_axis, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask.reshape(-1)

    # -- interpolation and extraction -------------------------------------

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the Q1 interpolant of nodal ``values`` at ``points``.

        ``values`` is (num_nodes, N); ``points`` is (m, dim) and must lie in
        the closed domain (coordinates are clamped to it).  Returns (m, N).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.cell_size
        rel = (pts - np.asarray(self.origin)) / h
        idx = np.clip(np.floor(rel).astype(int), 0, np.asarray(self.cells) - 1)
        t = np.clip(rel - idx, 0.0, 1.0)  # local coordinates in [0,1]
        corners = idx[:, None, :] + self.corner_bits[None, :, :]
        flat = np.ravel_multi_index(
            tuple(corners[..., k] for k in range(self.dim)), self.nodes_per_axis
        )
        bits = self.corner_bits[None, :, :]
        w = np.prod(np.where(bits == 1, t[:, None, :], 1.0 - t[:, None, :]), axis=2)
        vals = np.asarray(values)
        if vals.ndim == 1:
            vals = vals[:, None]
        return np.einsum("mc,mcn->mn", w, vals[flat])

    def node_index_box(self, box: Box, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis node index ranges (i0, i1) of a node-aligned box.

        Errors if a face of ``box`` misses the node lattice by more than
        ``rtol`` cells.
        """
        h = self.cell_size
        lo = (np.asarray(box.lo) - np.asarray(self.origin)) / h
        hi = (np.asarray(box.hi) - np.asarray(self.origin)) / h
        i0, i1 = np.rint(lo).astype(int), np.rint(hi).astype(int)
        if np.any(np.abs(lo - i0) > rtol) or np.any(np.abs(hi - i1) > rtol):
            raise ValueError("box is not aligned with the grid lattice")
        if np.any(i0 < 0) or np.any(i1 > np.asarray(self.cells)) or np.any(i1 - i0 < 1):
            raise ValueError("box does not fit inside the grid domain")
        return i0, i1

    def subgrid(self, box: Box) -> tuple["Grid", np.ndarray, np.ndarray]:
        """Extract the node-aligned sub-grid covering ``box``.

        Returns (sub_grid, node_indices, cell_indices): flat index arrays
        into this grid's nodes/cells, row-major in the sub-grid's ordering.
        No re-meshing: the sub-grid shares this grid's lattice.
        """
        i0, i1 = self.node_index_box(box)
        cells = tuple(int(c) for c in (i1 - i0))
        origin = tuple(np.asarray(self.origin) + i0 * self.cell_size)
        extent = tuple(np.asarray(cells) * self.cell_size)
        sub = Grid(self.dim, origin, extent, cells)
        node_axes = [np.arange(i0[k], i1[k] + 1) for k in range(self.dim)]
        mesh = np.meshgrid(*node_axes, indexing="ij")
        node_idx = np.ravel_multi_index(tuple(mesh), self.nodes_per_axis).reshape(-1)
        cell_axes = [np.arange(i0[k], i1[k]) for k in range(self.dim)]
        mesh_c = np.meshgrid(*cell_axes, indexing="ij")
        cell_idx = np.ravel_multi_index(tuple(mesh_c), self.cells).reshape(-1)
        return sub, node_idx, cell_idx


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal field on a grid: (num_nodes, codomain_dim) values, row-major."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.num_nodes:
            raise ValueError(
                f"values must be ({self.grid.num_nodes}, N), got {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def codomain_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, codomain_dim: int = 1) -> "GridFunction":
        out = np.asarray([fn(x) for x in grid.node_coords], dtype=float)
        return cls(grid, out.reshape(grid.num_nodes, codomain_dim))

    def at(self, points) -> np.ndarray:
        return self.grid.interpolate(self.values, points)


@dataclass(frozen=True, eq=False)
class CellField:
    """Per-cell field: one value (scalar or array) per cell, row-major.

    ``values`` has shape (num_cells, *component_shape); gradients store
    component_shape (N, dim).
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.num_cells:
            raise ValueError(
                f"values must have leading dim {self.grid.num_cells}, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def component_shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "CellField":
        out = np.asarray([fn(x) for x in grid.cell_centers], dtype=float)
        return cls(grid, out)

    def magnitude(self) -> np.ndarray:
        """(num_cells,) Euclidean (Frobenius) norm of each cell value."""
        v = self.values.reshape(self.grid.num_cells, -1)
        return np.sqrt(np.einsum("ck,ck->c", v, v))


# -- module operations -----------------------------------------------------


def make_grid(dim: int, origin, extent, cells_per_axis) -> Grid:
    """Build a uniform grid; validates dimension, extents, and cell counts."""
    return Grid(dim, tuple(np.atleast_1d(origin)), tuple(np.atleast_1d(extent)),
                tuple(np.atleast_1d(cells_per_axis)))


def gradient(u: GridFunction) -> CellField:
    """Per-cell gradient of the Q1 interpolant, evaluated at cell centers.

    Returns a CellField of shape (num_cells, N, dim).  Exact for affine
    fields; for multilinear fields it equals the interpolant's derivative
    at the center (the mixed terms average out there).
    """
    g = u.grid
    corner_vals = u.values[g.cell_corner_indices]  # (nc, 2^d, N)
    return CellField(g, np.einsum("cbn,bk->cnk", corner_vals, g.grad_coefs))


def _axis_overlaps(grid: Grid, region: Box) -> tuple[list[np.ndarray], list[slice]]:
    """Per-axis overlap lengths of grid cells with ``region`` plus the
    slices of cells with nonzero overlap."""
    if region.dim != grid.dim:
        raise ValueError("region dimension does not match grid")
    h = grid.cell_size
    overlaps, slices = [], []
    for k in range(grid.dim):
        left = grid.origin[k] + h[k] * np.arange(grid.cells[k])
        right = left + h[k]
        o = np.minimum(right, region.hi[k]) - np.maximum(left, region.lo[k])
        np.clip(o, 0.0, h[k], out=o)
        nz = np.nonzero(o)[0]
        if nz.size == 0:
            return [], []
        overlaps.append(o[nz[0] : nz[-1] + 1])
        slices.append(slice(int(nz[0]), int(nz[-1] + 1)))
    return overlaps, slices


def region_weights(grid: Grid, region: Box | None) -> np.ndarray:
    """Flat (num_cells,) quadrature weights: overlap volume of each cell
    with the region (full cell volume when region is None)."""
    if region is None:
        return np.full(grid.num_cells, grid.cell_volume)
    overlaps, slices = _axis_overlaps(grid, region)
    w = np.zeros(grid.cells)
    if overlaps:
        letters = "ijk"[: grid.dim]
        spec = ",".join(letters) + "->" + letters
        w[tuple(slices)] = np.einsum(spec, *overlaps)
    return w.reshape(-1)


def integrate(f: CellField, region: Box) -> float:
    """Midpoint-rule integral of a scalar cell field over an axis-parallel
    region; partial cells contribute by overlap volume.

    Raises ValueError("region outside domain") when the overlap is empty.
    """
    vals = f.values
    if vals.ndim != 1:
        raise ValueError("integrate expects a scalar cell field")
    overlaps, slices = _axis_overlaps(f.grid, region)
    if not overlaps:
        raise ValueError("region outside domain")
    block = vals.reshape(f.grid.cells)[tuple(slices)]
    letters = "ijk"[: f.grid.dim]
    spec = ",".join([letters] + list(letters)) + "->"
    return float(np.einsum(spec, block, *overlaps))


def overlap_measure(grid: Grid, region: Box) -> float:
    """Measure of region ∩ grid domain (0.0 when disjoint)."""
    overlaps, _ = _axis_overlaps(grid, region)
    if not overlaps:
        return 0.0
    return float(np.prod([o.sum() for o in overlaps]))


def mean_over(f: CellField, region: Box) -> float:
    """Average of a scalar cell field over region ∩ grid domain."""
    m = overlap_measure(f.grid, region)
    if m <= 0.0:
        raise ValueError("region outside domain")
    return integrate(f, region) / m
