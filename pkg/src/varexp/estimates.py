"""The estimate chain, measured: Caccioppoli, reverse Holder, Gehring
self-improvement, integrability transfer, and higher integrability.

Each check evaluates both sides of an inequality on concrete solved
instances by quadrature and records the empirical constant lhs/sum(rhs)
in an EstimateRecord.  The higher-integrability check additionally
recomputes its left-hand side through the proof's level-set route: the
q-th moment reconstructed from a lambda-sweep of superlevel-set measures,
split at the threshold kappa * lambda0 where the covering argument takes
over from the raw density (below it the set of the density itself, above
it the maximal function's).  The two routes must agree to sweep accuracy,
which is the strongest internal consistency test in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import default_max_level, dyadic_lattice, maximal_function
from .exponent import ExponentField
from .grid import (Box, CellField, GridFunction, gradient, integrate,
                   mean_over, overlap_measure, region_weights)
from .records import EstimateRecord
from .varlp import decay_weight

__all__ = [
    "EstimateRecord",
    "GehringResult",
    "energy_density",
    "data_density",
    "caccioppoli_check",
    "reverse_holder_check",
    "gehring_scan",
    "integrability_triplet",
    "higher_integrability_check",
    "global_proxy",
]


def energy_density(u: GridFunction, p: ExponentField) -> CellField:
    """|Du(x)|^{p(x)} at cell centers."""
    mag = gradient(u).magnitude()
    return CellField(u.grid, mag ** p.cell_values)


def data_density(G: CellField, p: ExponentField, m: float | None = None) -> CellField:
    """|G(x)|^{p(x)} + h(x) with the decay weight h = (e+|x|)^{-m}, m = 2n
    by default."""
    if m is None:
        m = 2.0 * G.grid.dim
    mag = G.magnitude()
    h = decay_weight(G.grid, m)
    return CellField(G.grid, mag ** p.cell_values + h.values)


def caccioppoli_check(u: GridFunction, G: CellField, p: ExponentField,
                      Q: Box) -> EstimateRecord:
    """Energy on Q against the scaled oscillation of u and the data on 2Q:

    integral_Q |Du|^p  vs  integral_{2Q} (|u - <u>_{2Q}| / R)^p
                          + integral_{2Q} |G|^p,   R = side of Q.
    """
    g = u.grid
    pc = p.cell_values
    Q2 = Q.scaled(2.0)
    lhs = integrate(energy_density(u, p), Q)

    fc = g.interpolate(u.values, g.cell_centers)
    w = region_weights(g, Q2)
    mean_u = (w @ fc) / w.sum()
    dev = np.linalg.norm(fc - mean_u, axis=1) / Q.side
    rhs1 = integrate(CellField(g, dev**pc), Q2)
    rhs2 = integrate(CellField(g, G.magnitude() ** pc), Q2)
    return EstimateRecord.build(
        "caccioppoli", lhs, {"oscillation": rhs1, "data": rhs2},
        cube=Q, resolution=g.cells,
    )


def reverse_holder_check(u: GridFunction, G: CellField, p: ExponentField,
                         Q: Box, s: float, m: float | None = None) -> EstimateRecord:
    """Mean energy on Q against the s-lowered mean on 2Q plus data terms:

    mean_Q |Du|^p  vs  (mean_{2Q} |Du|^{p/s})^s + mean_{2Q} |G|^p + mean_{2Q} h.

    requires 1 <= s < min{n/(n-1), p^- on 2Q}.
    """
    g = u.grid
    n = g.dim
    if m is None:
        m = 2.0 * n
    pc = p.cell_values
    Q2 = Q.scaled(2.0)
    w2 = region_weights(g, Q2)
    p_minus_2q = float(pc[w2 > 0].min())
    s_cap = min(n / (n - 1.0) if n > 1 else math.inf, p_minus_2q)
    if not (1.0 <= s < s_cap):
        raise ValueError(f"s must lie in [1, {s_cap}), got {s}")

    mag = gradient(u).magnitude()
    lhs = mean_over(energy_density(u, p), Q)
    rhs1 = mean_over(CellField(g, mag ** (pc / s)), Q2) ** s
    rhs2 = mean_over(CellField(g, G.magnitude() ** pc), Q2)
    rhs3 = mean_over(decay_weight(g, m), Q2)
    return EstimateRecord.build(
        "reverse-holder", lhs,
        {"lowered_energy": rhs1, "data": rhs2, "decay": rhs3},
        cube=Q, resolution=g.cells,
    )


@dataclass
class GehringResult:
    m0: float
    m1: float
    sigma: float
    mu_grid: list[float]
    ratio_table: list[tuple[float, float, float, float]]  # (mu, lhs, rhs, constant) at the worst cube
    cap: float
    cubes_tested: int
    records: list[EstimateRecord] = field(default_factory=list)


def gehring_scan(u: GridFunction, G: CellField, p: ExponentField, root: Box,
                 mu_max: float = 2.0, steps: int = 8, cap: float = 1e3,
                 m1: float | None = None, m: float | None = None,
                 levels: tuple[int, ...] | None = None) -> GehringResult:
    """Scan the self-improved reverse Holder inequality over mu in (1, mu_max]:

    (mean_Q |Du|^{p mu})^{1/mu}  vs  mean_{2Q} |Du|^p
                                     + (mean_{2Q} (|G|^{p mu} + h^mu))^{1/mu}

    over the dyadic cubes of the root with 2Q inside the root.  m0 is the
    largest sampled mu whose worst-cube constant stays at or below the cap;
    sigma = (min{m0, m1})^{1/4} is the integrability-transfer exponent
    (m1 defaults to m0).
    """
    g = u.grid
    n = g.dim
    if m is None:
        m = 2.0 * n
    if mu_max <= 1.0:
        raise ValueError("mu_max must exceed 1")
    pc = p.cell_values
    mag = gradient(u).magnitude()
    gmag = G.magnitude()
    h = decay_weight(g, m).values

    if levels is None:
        levels = tuple(range(1, max(2, default_max_level(root, g)) + 1))
    cubes = [q.box for q in dyadic_lattice(root, max(levels))
             if q.level in levels and root.contains_box(q.box.scaled(2.0))]
    if not cubes:
        raise ValueError("no dyadic cubes with 2Q inside the root")

    mu_grid = list(np.linspace(1.0, mu_max, steps))
    energy_field = CellField(g, mag**pc)
    table: list[tuple[float, float, float, float]] = []
    records: list[EstimateRecord] = []
    m0 = 1.0
    for mu in mu_grid:
        lhs_field = CellField(g, mag ** (pc * mu))
        data_field = CellField(g, gmag ** (pc * mu) + h**mu)
        worst, worst_rec = -1.0, None
        for qb in cubes:
            q2 = qb.scaled(2.0)
            lhs = mean_over(lhs_field, qb) ** (1.0 / mu)
            rhs1 = mean_over(energy_field, q2)
            rhs2 = mean_over(data_field, q2) ** (1.0 / mu)
            rec = EstimateRecord.build(
                f"gehring-mu={mu:g}", lhs, {"energy": rhs1, "data": rhs2},
                cube=qb, resolution=g.cells,
            )
            if rec.empirical_constant > worst:
                worst, worst_rec = rec.empirical_constant, rec
        table.append((float(mu), worst_rec.lhs, worst_rec.rhs_sum, worst))
        records.append(worst_rec)
        if worst <= cap:
            m0 = max(m0, float(mu))
    m1 = float(m1) if m1 is not None else m0
    sigma = min(m0, m1) ** 0.25
    return GehringResult(m0, m1, sigma, [float(x) for x in mu_grid], table,
                         cap, len(cubes), records)


def integrability_triplet(u: GridFunction, w: GridFunction, Qj: Box,
                          p: ExponentField, p_j: float, sigma: float,
                          lam: float | None = None) -> EstimateRecord:
    """Transfer exponents on a covering cube: the three means

    (mean_{2Qj} |Du|^{sigma^3 p_j})^{1/sigma^3},
    (mean_{2Qj} |Dw|^{sigma^3 p_j})^{1/sigma^3},
    (mean_{2Qj} |Dw|^{sigma^2 p(.)})^{1/sigma^2},

    recorded with their ratios to the covering height lam when given.
    """
    if sigma <= 1.0:
        raise ValueError("sigma must exceed 1")
    sub, _, cell_idx = u.grid.subgrid(Qj.scaled(2.0))
    if w.grid != sub:
        raise ValueError("w does not live on the sub-grid of 2Qj")
    du = gradient(u).magnitude()[cell_idx]
    dw = gradient(w).magnitude()
    pc = p.cell_values[cell_idx]
    s3 = sigma**3
    t_u = float((du ** (s3 * p_j)).mean() ** (1.0 / s3))
    t_w = float((dw ** (s3 * p_j)).mean() ** (1.0 / s3))
    t_wx = float((dw ** (sigma**2 * pc)).mean() ** (1.0 / sigma**2))
    flags = []
    if lam is not None:
        for nm, v in (("du_pj", t_u), ("dw_pj", t_w), ("dw_px", t_wx)):
            flags.append(f"{nm}/lam={v / lam:.6g}")
    return EstimateRecord.build(
        "integrability-triplet", t_u,
        {"dw_pj": t_w, "dw_px": t_wx, "lam": lam if lam is not None else 0.0},
        cube=Qj, resolution=u.grid.cells, flags=flags,
    )


def _sweep_moment(F: CellField, root: Box, q: float, lam0: float, kappa: float,
                  mstar: np.ndarray, points: int) -> tuple[float, float, float, np.ndarray]:
    """q-th moment mean of F over the root via the level-set route.

    Integrates q lam^{q-1} D(lam) over a geometric grid of lambdas running
    from lam0/10 to twice the peak of the maximal function (extended if the
    raw density peaks higher), with D(lam) = |{F > lam} ∩ root| at and below
    the threshold kappa*lam0 and D(lam) = |{M*F > lam}| above it.  The
    threshold itself is a grid point.  Returns (mean moment, head, tail,
    lambda grid), head being the contribution of [0, kappa*lam0].
    """
    g = F.grid
    w = region_weights(g, root)
    measure = w.sum()
    fv = F.values
    vol = g.cell_volume
    fmax = float(fv[w > 0].max())
    if lam0 <= 0.0 or fmax <= 0.0:
        return 0.0, 0.0, 0.0, np.zeros(0)

    thresh = kappa * lam0
    top = 2.0 * max(float(mstar.max()), fmax / 2.0, thresh / 2.0)
    lams = np.geomspace(lam0 / 10.0, top, points)
    if lams[0] < thresh < lams[-1]:
        lams = np.unique(np.append(lams, thresh))

    def D(lam: float) -> float:
        if lam <= thresh:
            return float(w[fv > lam].sum())
        return float((mstar > lam).sum()) * vol

    dvals = np.asarray([D(lam) for lam in lams])
    gvals = q * lams ** (q - 1.0) * dvals
    below = lams[0] ** q * dvals[0]  # D is treated as constant below lam0/10
    total = below + float(np.trapezoid(gvals, lams))
    head_mask = lams <= thresh
    head = below
    if head_mask.sum() > 1:
        head += float(np.trapezoid(gvals[head_mask], lams[head_mask]))
    return total / measure, head / measure, (total - head) / measure, lams


def higher_integrability_check(u: GridFunction, G: CellField, p: ExponentField,
                               q: float, root: Box, kappa: float, epsilon: float,
                               m0: float, sweep_points: int = 64,
                               max_level: int | None = None,
                               m: float | None = None) -> EstimateRecord:
    """Measured higher integrability of the energy density F = |Du|^{p(.)}:

    (mean_root F^q)^{1/q}  vs  mean_{2 root} F
                               + (mean_{2 root} (|G|^p + h)^q)^{1/q}.

    The left side is computed twice: directly by quadrature, and through
    the level-set reconstruction split at kappa * lambda0 (below: superlevel
    sets of F; above: of the maximal function M*F).  Their relative gap and
    the head/tail split are recorded as flags.  epsilon and m0 are carried
    for provenance of the good-lambda configuration that motivated kappa.
    """
    if q < 1.0:
        raise ValueError("q must be >= 1")
    g = u.grid
    p.require_superlinear("higher_integrability_check")
    F = energy_density(u, p)
    root2 = root.scaled(2.0)
    lam0 = mean_over(F, root2)
    lhs_direct = mean_over(CellField(g, F.values**q), root) ** (1.0 / q)

    if max_level is None:
        max_level = default_max_level(root, g)
    mstar = maximal_function(F, root, 1.0, max_level).values
    moment, head, tail, _ = _sweep_moment(F, root, q, lam0, kappa, mstar, sweep_points)
    lhs_sweep = moment ** (1.0 / q)
    rel_gap = abs(lhs_sweep - lhs_direct) / lhs_direct if lhs_direct > 0 else 0.0

    rhs1 = lam0
    gh = data_density(G, p, m)
    rhs2 = mean_over(CellField(g, gh.values**q), root2) ** (1.0 / q)
    flags = [
        f"lhs_sweep={lhs_sweep:.12g}",
        f"sweep_rel_gap={rel_gap:.6g}",
        f"head={head:.12g}",
        f"tail={tail:.12g}",
        f"lambda0={lam0:.12g}",
        f"kappa={kappa:g}",
        f"epsilon={epsilon:g}",
        f"m0={m0:g}",
    ]
    if rel_gap > 0.05:
        flags.append("level-set-route-mismatch")
    return EstimateRecord.build(
        f"higher-integrability-q={q:g}", lhs_direct,
        {"mean_energy": rhs1, "data_term": rhs2},
        cube=root, resolution=g.cells, flags=flags,
    )


def global_proxy(u: GridFunction, G: CellField, p: ExponentField, q: float,
                 box_sizes, kappa: float = 8.0, epsilon: float = 0.1,
                 m0: float = 1.5, m: float | None = None) -> list[EstimateRecord]:
    """Norm-form estimate on nested boxes Omega_R = (-R, R)^n:

    (integral_{Omega} |Du|^{pq})^{1/q}  vs
        |Omega|^{1/q} mean_{2 Omega} |Du|^p
        + (integral_{2 Omega} (|G|^p + h)^q)^{1/q}.

    Checks boundedness of the empirical constants across R (not a limit
    statement).  The instance must be defined on the largest doubled box.
    """
    g = u.grid
    n = g.dim
    records = []
    F = energy_density(u, p)
    gh = data_density(G, p, m)
    for R in box_sizes:
        omega = Box((-float(R),) * n, (float(R),) * n)
        if not g.domain.contains_box(omega.scaled(2.0)):
            raise ValueError("instance is not defined on the largest doubled box")
        vol = overlap_measure(g, omega)
        lhs = (mean_over(CellField(g, F.values**q), omega) * vol) ** (1.0 / q)
        rhs1 = vol ** (1.0 / q) * mean_over(F, omega.scaled(2.0))
        rhs2 = integrate(CellField(g, gh.values**q), omega.scaled(2.0)) ** (1.0 / q)
        records.append(EstimateRecord.build(
            f"global-proxy-R={R:g}", lhs,
            {"scaled_mean_energy": rhs1, "data_norm": rhs2},
            cube=omega, resolution=g.cells,
            flags=[f"kappa={kappa:g}", f"epsilon={epsilon:g}", f"m0={m0:g}"],
        ))
    return records
