"""Mather measures as a finite linear program over discretized measures.

Minimize the average action sum L(x_i, v_j) * mu_ij over nonnegative weights
with unit mass, subject to one holonomy row per grid node: the flux-form
transpose of the donor-cell transport operator applied to a hat test function.
Using the transport transpose (rather than, say, central differences) makes
the measures produced by the adjoint route feasible for these rows up to
their own discretization defect, so the two computations of Mather measures
are consistent by construction.  The degenerate-viscous variant adds
-a(x_i) * (discrete second difference of the hat) to each row.

A single LP solve returns one extreme optimal measure.  The projected Mather
set is the union of position-supports over *all* optimal measures; it is
approximated by re-solving under a bank of tie-breaking objective
perturbations and, exhaustively, by probing each node for the largest mass it
can carry on aggregate-optimal measures (one auxiliary LP per node).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .grid import TorusGrid, VelocityGrid
from .hamiltonian import HamiltonianModel
from .adjoint import DiscreteMeasure, _lagrangian_table, default_velocity_grid

__all__ = [
    "HolonomicLP",
    "MatherResult",
    "holonomy_rows",
    "build_lp",
    "solve_lp",
    "projected_mather_set",
    "mather_set_union",
    "SUPPORT_THRESHOLD",
]

FEASIBILITY_TOL = 1e-8
SUPPORT_THRESHOLD = 0.1  # fraction of the uniform per-node mass
PERTURBATION_AMPLITUDE = 1e-4


def holonomy_rows(grid: TorusGrid, vgrid: VelocityGrid,
                  a_values: np.ndarray | None = None) -> sp.csr_matrix:
    """One row per node k: coefficients of integral v.Dphi_k (mu) over cells.

    Against the hat function at node k the transport transpose contributes,
    per axis, |v|/h at position k, -max(v,0)/h at k+1 and +min(v,0)/h at k-1.
    The optional viscous part adds -a(x_i)*Lap(hat_k)(x_i), independent of the
    velocity column.
    """
    v = vgrid.nodes
    m = len(v)
    if grid.dim == 1:
        n = grid.shape[0]
        h = grid.spacing[0]
        rows, cols, data = [], [], []
        ks = np.repeat(np.arange(n), m)
        js = np.tile(np.arange(m), n)
        for shift, coeff in ((0, np.abs(v) / h),
                             (1, -np.maximum(v, 0.0) / h),
                             (-1, np.minimum(v, 0.0) / h)):
            rows.append(ks)
            cols.append(((ks + shift) % n) * m + js)
            data.append(np.tile(coeff, n))
        if a_values is not None:
            a = np.asarray(a_values, dtype=float).reshape(-1)
            for shift, sign in ((0, 2.0), (1, -1.0), (-1, -1.0)):
                pos = (ks + shift) % n
                rows.append(ks)
                cols.append(pos * m + js)
                data.append(sign * a[pos] / h**2)
        mat = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n * m),
        )
        return mat.tocsr()

    n1, n2 = grid.shape
    h1, h2 = grid.spacing
    n_nodes = n1 * n2
    n_cells = n_nodes * m * m
    node = np.arange(n_nodes)
    i1, i2 = node // n2, node % n2
    rows, cols, data = [], [], []

    def cell_index(p1, p2, j1, j2):
        return ((p1 * n2 + p2) * m + j1) * m + j2

    j1 = np.arange(m)
    for axis, (h, comp) in enumerate(((h1, 0), (h2, 1))):
        for shift, coeff in ((0, np.abs(v) / h),
                             (1, -np.maximum(v, 0.0) / h),
                             (-1, np.minimum(v, 0.0) / h)):
            p1 = (i1 + (shift if comp == 0 else 0)) % n1
            p2 = (i2 + (shift if comp == 1 else 0)) % n2
            # broadcast over both velocity axes; coeff attaches to axis `comp`
            for ja in range(m):
                for jb in range(m):
                    c = coeff[ja] if comp == 0 else coeff[jb]
                    if c == 0.0:
                        continue
                    rows.append(node)
                    cols.append(cell_index(p1, p2, ja, jb))
                    data.append(np.full(n_nodes, c))
    if a_values is not None:
        a = np.asarray(a_values, dtype=float)
        lap_coeff = ((0, 0, 2.0 / h1**2 + 2.0 / h2**2),
                     (1, 0, -1.0 / h1**2), (-1, 0, -1.0 / h1**2),
                     (0, 1, -1.0 / h2**2), (0, -1, -1.0 / h2**2))
        for s1, s2, c in lap_coeff:
            p1 = (i1 + s1) % n1
            p2 = (i2 + s2) % n2
            av = a[p1, p2]
            for ja in range(m):
                for jb in range(m):
                    rows.append(node)
                    cols.append(cell_index(p1, p2, ja, jb))
                    data.append(c * av)
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_cells),
    )
    return mat.tocsr()


@dataclass
class HolonomicLP:
    """Objective, equality rows (mass + holonomy), and grid bookkeeping."""

    objective: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    grid: TorusGrid
    vgrid: VelocityGrid
    viscous: bool

    @property
    def n_variables(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.A_eq.shape[0]


@dataclass
class MatherResult:
    """Optimal discrete measure with diagnostics."""

    measure: DiscreteMeasure
    optimal_value: float
    projected_set: list
    solver_status: str
    primal_residual: float
    duality_gap: float | None


def build_lp(model: HamiltonianModel, grid: TorusGrid,
             vgrid: VelocityGrid | None = None, viscous: bool = False) -> HolonomicLP:
    """Assemble the action-minimization LP over holonomic discrete measures."""
    if vgrid is None:
        vgrid = default_velocity_grid(model)
    a_values = None
    if viscous:
        if model.diffusion is None:
            raise ValueError("viscous LP requested but the model has no diffusion coefficient")
        mesh = grid.meshgrid()
        a_values = np.asarray(model.diffusion(*mesh), dtype=float) * np.ones(grid.shape)
    objective = _lagrangian_table(model, grid, vgrid).reshape(-1)
    rows = holonomy_rows(grid, vgrid, a_values)
    mass = sp.csr_matrix(np.ones((1, rows.shape[1])))
    A_eq = sp.vstack([mass, rows]).tocsr()
    b_eq = np.zeros(A_eq.shape[0])
    b_eq[0] = 1.0
    return HolonomicLP(objective=objective, A_eq=A_eq, b_eq=b_eq, grid=grid,
                       vgrid=vgrid, viscous=viscous)


_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _weights_from_x(lp: HolonomicLP, x: np.ndarray) -> np.ndarray:
    m = lp.vgrid.m_points
    shape = lp.grid.shape + (m,) * lp.grid.dim
    w = np.maximum(x, 0.0)
    return (w / w.sum()).reshape(shape)


def solve_lp(lp: HolonomicLP, objective: np.ndarray | None = None) -> MatherResult:
    """Solve to an optimal basic solution with tight feasibility tolerances.

    Unboundedness cannot occur (the action is bounded below on the truncated
    grid) and is reported as a solver failure; infeasibility is propagated.
    """
    c = lp.objective if objective is None else objective
    res = linprog(c, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=(0, None),
                  method="highs", options=_HIGHS_OPTIONS)
    status = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded"}.get(
        res.status, "failed"
    )
    if status != "optimal":
        raise RuntimeError(f"LP solve failed with status {status!r}: {res.message}")
    x = res.x
    primal_residual = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq)))
    gap = None
    if res.eqlin is not None and res.eqlin.marginals is not None:
        dual_obj = float(lp.b_eq @ res.eqlin.marginals)
        gap = abs(float(c @ x) - dual_obj) / (1.0 + abs(float(c @ x)))
    weights = _weights_from_x(lp, x)
    measure = DiscreteMeasure(lp.grid, lp.vgrid, weights)
    optimal_value = float(np.sum(lp.objective.reshape(weights.shape) * weights))
    result = MatherResult(
        measure=measure, optimal_value=optimal_value, projected_set=[],
        solver_status=status, primal_residual=primal_residual, duality_gap=gap,
    )
    result.projected_set = projected_mather_set(result)
    return result


def projected_mather_set(result: MatherResult,
                         threshold: float = SUPPORT_THRESHOLD) -> list:
    """Nodes whose position-marginal mass exceeds threshold x (uniform mass)."""
    marginal = result.measure.position_marginal()
    cut = threshold * float(np.prod(result.measure.grid.spacing))
    idx = np.argwhere(marginal > cut)
    return [tuple(int(i) for i in row) for row in idx]


def _perturbation_bank(grid: TorusGrid) -> list[np.ndarray]:
    """8 fixed smooth tie-breaking perturbations (+- low sin/cos modes)."""
    mesh = grid.meshgrid()
    bank = []
    freqs = (1, 2) if grid.dim == 1 else (1,)
    for a in range(grid.dim):
        for k in freqs:
            for fn in (np.sin, np.cos):
                g = fn(2 * np.pi * k * mesh[a]) * np.ones(grid.shape)
                bank.append(g)
                bank.append(-g)
    return bank[:8]


def mather_set_union(model: HamiltonianModel, grid: TorusGrid,
                     vgrid: VelocityGrid | None = None, viscous: bool = False,
                     threshold: float = SUPPORT_THRESHOLD,
                     support_probe: bool = True,
                     lp: HolonomicLP | None = None):
    """Approximate the union of supports over all optimal measures.

    Two passes: (a) re-solve under the tie-breaking perturbation bank and
    collect supports; (b) optionally probe every node with an auxiliary LP
    that maximizes the node's marginal mass over the optimal face (objective
    pinned to the optimal value).  The probe realizes the definition of the
    projected set directly and catches optimal faces whose extreme points the
    bank misses (e.g. flat potentials, where every position carries a
    minimizing measure).

    Returns (sorted node list, base MatherResult).
    """
    if lp is None:
        lp = build_lp(model, grid, vgrid, viscous)
    base = solve_lp(lp)
    nodes = set(base.projected_set)

    m = lp.vgrid.m_points
    for g in _perturbation_bank(grid):
        pert = lp.objective + PERTURBATION_AMPLITUDE * np.repeat(
            g.reshape(-1), m**grid.dim
        )
        res = solve_lp(lp, objective=pert)
        # support of a perturbed-optimal measure, judged by the base threshold
        nodes.update(projected_mather_set(res, threshold))

    if support_probe:
        cut = threshold * float(np.prod(grid.spacing))
        face_tol = 1e-7 * (1.0 + abs(base.optimal_value))
        A_ub = sp.csr_matrix(lp.objective[None, :])
        b_ub = np.array([base.optimal_value + face_tol])
        n_nodes = grid.n_nodes
        for flat in range(n_nodes):
            idx = np.unravel_index(flat, grid.shape)
            if tuple(int(i) for i in idx) in nodes:
                continue
            sel = np.zeros(lp.n_variables)
            block = m**grid.dim
            sel[flat * block:(flat + 1) * block] = -1.0  # maximize marginal mass
            res = linprog(sel, A_eq=lp.A_eq, b_eq=lp.b_eq, A_ub=A_ub, b_ub=b_ub,
                          bounds=(0, None), method="highs", options=_HIGHS_OPTIONS)
            if res.status == 0 and -res.fun > cut:
                nodes.add(tuple(int(i) for i in idx))
    return sorted(nodes), base
