"""Large-time asymptotics of the Cauchy problem and their representation.

Two independent routes to the asymptotic profile of u_t + H(x,Du) = 0 for a
normalized model:

* ``profile_direct``: march the monotone scheme until u(.,t) - u(.,t-1) is
  uniformly constant, and return the field as is.  No gauge is applied: the
  additive constant of the limit is meaningful, it encodes the initial data.
* ``profile_formula``: evaluate min over Mather nodes y of d(x,y) + u0^-(y),
  with u0^- the maximal subsolution below u0 and d from the distance bank.

On the projected Mather set itself the limit must agree with u0^- node-wise;
``compare_profiles`` records that trace along with the global gap between the
two routes.  ``check_lemma31`` monitors the stronger statement for
subsolution initial data: the evolution never moves on the Mather set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction
from .hamiltonian import HamiltonianModel
from .hj_solver import SchemeConfig, _evolve_stationary, DEFAULT_TOL
from .metric import DistanceBank, maximal_subsolution, is_subsolution

__all__ = [
    "ProfileReport",
    "profile_direct",
    "profile_formula",
    "check_lemma31",
    "compare_profiles",
]


@dataclass
class ProfileReport:
    """Direct and formula profiles with their gap and Mather-set trace."""

    direct: GridFunction
    formula: GridFunction
    sup_gap: float
    mather_trace: list[dict]
    converged: bool
    final_rate: float
    t_reached: float


def profile_direct(model: HamiltonianModel, config: SchemeConfig,
                   u0: GridFunction, tol: float = DEFAULT_TOL):
    """Long-time limit of the evolution from u0, without normalization.

    Returns (field, converged, final_rate, t_reached).  The run stops at
    shape-stationarity; afterwards the field would only accumulate the
    scheme's own O(h^2) constant drift, which tests nothing further.
    """
    v, _, converged, deviation, t_reached, _ = _evolve_stationary(
        model, config, u0, tol
    )
    return GridFunction(u0.grid, v), converged, deviation, t_reached


def profile_formula(model: HamiltonianModel, u0: GridFunction, mather_nodes,
                    bank: DistanceBank) -> GridFunction:
    """Theorem-style representation: min over y in M of d(x,y) + u0^-(y)."""
    nodes = list(mather_nodes)
    if not nodes:
        raise ValueError("empty Mather node set")
    u0_minus = maximal_subsolution(model, u0, bank)
    base_flat = bank.base_flat()
    flat_of = {}
    ncols = u0.grid.shape[1] if u0.grid.dim == 2 else 1
    for k, idx in enumerate(bank.base_indices):
        flat = idx[0] * ncols + idx[1] if u0.grid.dim == 2 else idx[0]
        flat_of[flat] = k
    out = np.full(u0.grid.n_nodes, np.inf)
    u0m_flat = u0_minus.values.reshape(-1)
    for node in nodes:
        idx = tuple(node) if isinstance(node, (tuple, list)) else (int(node),)
        flat = idx[0] * ncols + idx[1] if u0.grid.dim == 2 else idx[0]
        if flat not in flat_of:
            raise ValueError(f"Mather node {idx} is not covered by the distance bank")
        k = flat_of[flat]
        out = np.minimum(out, bank.matrix[:, k] + u0m_flat[base_flat[k]])
    return GridFunction(u0.grid, out.reshape(u0.grid.shape))


def check_lemma31(model: HamiltonianModel, u0: GridFunction, mather_nodes,
                  config: SchemeConfig, tol: float = DEFAULT_TOL,
                  sub_tol: float | None = None) -> dict:
    """For subsolution initial data, u(.,t) should never move on the Mather set.

    Refuses non-subsolution input.  Records the deviation max over the given
    nodes at every unit time until shape-stationarity, and reports the max
    over time and the terminal value.
    """
    ok, violation = is_subsolution(model, u0, sub_tol)
    if not ok:
        raise ValueError(
            f"initial data is not a subsolution (violation {violation:.4g}); "
            "the invariance statement does not apply"
        )
    ncols = u0.grid.shape[1] if u0.grid.dim == 2 else 1
    flats = []
    for node in mather_nodes:
        idx = tuple(node) if isinstance(node, (tuple, list)) else (int(node),)
        flats.append(idx[0] * ncols + idx[1] if u0.grid.dim == 2 else idx[0])
    flats = np.asarray(flats, dtype=int)
    u0_at = u0.values.reshape(-1)[flats]

    series = []

    def record(t, vals):
        series.append((t, float(np.max(np.abs(vals.reshape(-1)[flats] - u0_at)))))

    _, _, converged, _, t_reached, _ = _evolve_stationary(
        model, config, u0, tol, on_checkpoint=record
    )
    devs = [d for _, d in series]
    return {
        "max_over_time": max(devs),
        "terminal": devs[-1],
        "series": series,
        "converged": converged,
        "t_reached": t_reached,
        "subsolution_violation": violation,
    }


def compare_profiles(model: HamiltonianModel, config: SchemeConfig,
                     u0: GridFunction, mather_nodes, bank: DistanceBank,
                     tol: float = DEFAULT_TOL) -> ProfileReport:
    """Run both profile routes and assemble the comparison report."""
    direct, converged, rate, t_reached = profile_direct(model, config, u0, tol)
    formula = profile_formula(model, u0, mather_nodes, bank)
    u0_minus = maximal_subsolution(model, u0, bank)
    sup_gap = float(np.max(np.abs(direct.values - formula.values)))
    ncols = u0.grid.shape[1] if u0.grid.dim == 2 else 1
    trace = []
    for node in mather_nodes:
        idx = tuple(node) if isinstance(node, (tuple, list)) else (int(node),)
        flat = idx[0] * ncols + idx[1] if u0.grid.dim == 2 else idx[0]
        trace.append({
            "node": idx,
            "direct": float(direct.values.reshape(-1)[flat]),
            "u0_minus": float(u0_minus.values.reshape(-1)[flat]),
            "formula": float(formula.values.reshape(-1)[flat]),
        })
    return ProfileReport(
        direct=direct, formula=formula, sup_gap=sup_gap, mather_trace=trace,
        converged=converged, final_rate=rate, t_reached=t_reached,
    )
