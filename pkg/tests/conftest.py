"""Shared instances for the test suite.

The session-scoped fixtures hold solved instances that several modules
measure against; solving them once keeps the suite fast.
"""

import numpy as np
import pytest

from varexp.exponent import ExponentField
from varexp.grid import CellField, Grid, GridFunction
from varexp.solver import SolveOptions, manufactured_instance, solve_pxlaplace


def smooth_exponent(grid: Grid, amp: float = 0.12) -> ExponentField:
    """Gently oscillating exponent with measured c_log well below 0.1."""
    return ExponentField.from_function(
        grid,
        lambda x: 2.0 + amp * np.sin(0.5 * np.pi * x[0]) * np.sin(0.5 * np.pi * x[1]),
        p_infinity=2.0,
    )


def solved_matched(n: int) -> dict:
    grid = Grid(2, (-2.0, -2.0), (4.0, 4.0), (n, n))
    p = smooth_exponent(grid)
    u_star, G, boundary = manufactured_instance("matched", grid, p)
    result = solve_pxlaplace(G, p, boundary, grid, SolveOptions())
    assert result.converged, result.message
    return {"grid": grid, "p": p, "u_star": u_star, "G": G,
            "boundary": boundary, "result": result}


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, (-2.0, -2.0), (4.0, 4.0), (32, 32))


@pytest.fixture(scope="session")
def p_smooth(grid32):
    return smooth_exponent(grid32)


@pytest.fixture(scope="session")
def matched32():
    return solved_matched(32)


@pytest.fixture(scope="session")
def matched64():
    return solved_matched(64)


@pytest.fixture(scope="session")
def affine32(grid32):
    """Affine state with zero data: an exact discrete critical point."""
    u = GridFunction.from_function(grid32, lambda x: 3.0 * x[0] - 2.0 * x[1] + 0.5)
    G = CellField(grid32, np.zeros((grid32.num_cells, 1, 2)))
    p = ExponentField.constant(grid32, 2.0)
    return {"grid": grid32, "u": u, "G": G, "p": p}
