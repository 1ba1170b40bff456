"""Dyadic lattice, localized maximal operator, covering, and good-lambda.

The maximal/covering oracles here are independent brute-force loops over
all lattice cubes, compared against the production implementations.
"""

import itertools

import numpy as np
import pytest

from varexp.dyadic import (
    DyadicCube,
    cz_cover,
    default_kappa,
    default_max_level,
    dyadic_lattice,
    good_lambda_measure,
    level_sets,
    maximal_function,
    predecessor,
)
from varexp.grid import Box, CellField, Grid, integrate, mean_over, overlap_measure


def brute_maximal(f, root, s, max_level):
    """Reference maximal function: loop over all cubes per cell center."""
    g = f.grid
    cubes = dyadic_lattice(root, max_level)
    tol = 1e-12 * max(root.side, 1.0)
    out = np.zeros(g.num_cells)
    lo, hi = np.asarray(root.lo), np.asarray(root.hi)
    power = np.abs(f.values) ** s
    for i, x in enumerate(g.cell_centers):
        if not (np.all(x >= lo - tol) and np.all(x <= hi + tol)):
            continue
        best = 0.0
        for q in cubes:
            b = q.box
            if np.all(x >= np.asarray(b.lo) - tol) and np.all(x <= np.asarray(b.hi) + tol):
                b2 = b.scaled(2.0)
                m = integrate(CellField(g, power), b2) / overlap_measure(g, b2)
                best = max(best, m ** (1.0 / s))
        out[i] = best
    return out


def test_lattice_counts():
    root2 = Box((0.0, 0.0), (1.0, 1.0))
    assert [len(dyadic_lattice(root2, d)) for d in (0, 1, 3)] == [1, 5, 85]
    root1 = Box((0.0,), (1.0,))
    assert [len(dyadic_lattice(root1, d)) for d in (0, 1, 3)] == [1, 3, 15]


def test_cube_geometry_and_children():
    root = Box((0.0, 0.0), (2.0, 2.0))
    q = DyadicCube(root, 1, (1, 0))
    assert q.box.lo == (1.0, 0.0) and q.box.hi == (2.0, 1.0)
    kids = q.children()
    assert len(kids) == 4
    assert sum(k.box.measure for k in kids) == pytest.approx(q.box.measure)
    for k in kids:
        assert predecessor(k).box == q.box


def test_cube_validation_and_root_predecessor():
    root = Box((0.0,), (1.0,))
    with pytest.raises(ValueError):
        DyadicCube(root, 1, (2,))  # index out of range
    with pytest.raises(ValueError):
        predecessor(DyadicCube(root, 0, (0,)))


def test_default_max_level_resolves_to_cell_pairs():
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (32, 32))
    # root of 16 cells per side: the deepest default cube spans 2 cells
    assert default_max_level(g.domain.scaled(0.5), g) == 3
    g8 = Grid(2, (-2.0, -2.0), (4.0, 4.0), (8, 8))
    assert default_max_level(g8.domain.scaled(0.5), g8) == 1


def test_maximal_function_equals_brute_force():
    rng = np.random.default_rng(2)
    for dim, cells in ((1, (16,)), (2, (8, 8))):
        g = Grid(dim, (-2.0,) * dim, (4.0,) * dim, cells)
        root = g.domain.scaled(0.5)
        for s in (1.0, 1.5):
            f = CellField(g, rng.uniform(0.0, 5.0, g.num_cells))
            got = maximal_function(f, root, s).values
            want = brute_maximal(f, root, s, default_max_level(root, g))
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)


def test_maximal_function_zero_off_root():
    g = Grid(1, (-2.0,), (4.0,), (16,))
    root = g.domain.scaled(0.25)
    f = CellField(g, np.ones(16))
    mf = maximal_function(f, root, 1.0).values
    outside = ~((g.cell_centers[:, 0] >= root.lo[0]) & (g.cell_centers[:, 0] <= root.hi[0]))
    assert (mf[outside] == 0.0).all()
    assert (mf[~outside] > 0.0).all()


def test_maximal_function_validation():
    g = Grid(1, (-2.0,), (4.0,), (16,))
    f = CellField(g, np.ones(16))
    with pytest.raises(ValueError, match="doubled root"):
        maximal_function(f, g.domain, 1.0)  # 2*root exits the domain
    with pytest.raises(ValueError):
        maximal_function(f, g.domain.scaled(0.5), 0.0)


def test_cz_cover_sandwich_disjoint_and_covers():
    rng = np.random.default_rng(9)
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (16, 16))
    root = g.domain.scaled(0.5)
    n = g.dim
    for _ in range(25):
        f = CellField(g, rng.uniform(0.0, 1.0, g.num_cells) ** 2)
        lam0 = mean_over(f, root.scaled(2.0))
        lam = lam0 * rng.uniform(1.0, 4.0)
        cover = cz_cover(f, root, lam)
        seen = set()
        for q in cover.cubes:
            m2 = mean_over(f, q.box.scaled(2.0))
            assert lam < m2 <= 2.0**n * lam * (1 + 1e-12)
            assert q.level > 0  # proper sub-cubes
            # disjoint: dyadic cubes of one tree intersect only by nesting
            for lev, idx in seen:
                if lev <= q.level:
                    assert tuple(i >> (q.level - lev) for i in q.index) != idx
            seen.add((q.level, q.index))
        # the cover catches the superlevel set of the maximal function
        mf = maximal_function(f, root, 1.0).values
        hot = np.flatnonzero(mf > lam * (1 + 1e-9))
        for i in hot:
            x = g.cell_centers[i]
            assert any(q.box.scaled(1.0 + 1e-12).contains_point(x) for q in cover.cubes)


def test_cz_cover_below_threshold_raises():
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (8, 8))
    f = CellField(g, np.ones(g.num_cells))
    root = g.domain.scaled(0.5)
    lam0 = mean_over(f, root.scaled(2.0))
    with pytest.raises(ValueError, match="covering threshold"):
        cz_cover(f, root, 0.5 * lam0)


def test_level_sets_nesting_and_validation():
    rng = np.random.default_rng(13)
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (8, 8))
    root = g.domain.scaled(0.5)
    F = CellField(g, rng.uniform(0, 2, g.num_cells))
    Gh = CellField(g, rng.uniform(0, 2, g.num_cells))
    lam = mean_over(F, root.scaled(2.0))
    ls = level_sets(F, Gh, lam, 4.0, 0.1, 1.5, root)
    # U lives inside the lambda superlevel set (kappa >= 1)
    assert np.all(ls.u_mask <= ls.o_mask)
    assert ls.u_measure <= overlap_measure(g, root) + 1e-12
    for bad in ((0.0, 4.0, 0.1), (lam, 0.5, 0.1), (lam, 4.0, 0.0)):
        with pytest.raises(ValueError):
            level_sets(F, Gh, bad[0], bad[1], bad[2], 1.5, root)


def test_good_lambda_epsilon_monotone_and_bounds():
    rng = np.random.default_rng(29)
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (16, 16))
    root = g.domain.scaled(0.5)
    eps = (0.4, 0.2, 0.1, 0.05)
    for _ in range(10):
        F = CellField(g, rng.uniform(0, 1, g.num_cells) ** 4)
        Gh = CellField(g, rng.uniform(0, 1, g.num_cells) ** 4)
        lam0 = mean_over(F, root.scaled(2.0))
        res = good_lambda_measure(F, Gh, root, 4.5, eps, [lam0, 2 * lam0], 1.5)
        deltas = [res.delta(e) for e in eps]
        assert all(0.0 <= d <= 1.0 for d in deltas)
        # U shrinks as epsilon decreases
        assert all(a >= b - 1e-15 for a, b in zip(deltas, deltas[1:]))
        for _, _, d in res.rows:
            assert 0.0 <= d <= 1.0


def test_good_lambda_empty_superlevel_reports_zero():
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (8, 8))
    root = g.domain.scaled(0.5)
    F = CellField(g, np.ones(g.num_cells))
    Gh = CellField(g, np.zeros(g.num_cells))
    res = good_lambda_measure(F, Gh, root, 4.0, (0.1,), [1e9], 1.5)
    assert res.delta(0.1) == 0.0


def test_good_lambda_kappa_guard():
    g = Grid(2, (-2.0, -2.0), (4.0, 4.0), (8, 8))
    root = g.domain.scaled(0.5)
    F = CellField(g, np.ones(g.num_cells))
    with pytest.raises(ValueError, match="2\\^n"):
        good_lambda_measure(F, F, root, 2.0, (0.1,), [1.0], 1.5)


def test_default_kappa_formula():
    assert default_kappa(1.0, 2) == 8.0
    assert default_kappa(2.5, 1) == 10.0
    assert default_kappa(1.967, 3) == pytest.approx(16 * 1.967)
