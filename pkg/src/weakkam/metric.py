"""The critical distance d(x,y), maximal subsolutions, and subsolution tests.

d(x,y) is the largest increment v(x) - v(y) over subsolutions v of the
critical equation H(x, Dv) = 0.  In 1D the subsolution condition pins Dv to
the momentum interval [p-(x), p+(x)] given by the roots of H(x,.) = 0, so d
reduces to the smaller of two arc integrals,

    d(x,y) = min( int_{y->x, rightward} p+ ,  int_{x->y, rightward} (-p-) ),

evaluated here by composite-midpoint quadrature on the momentum roots.  This
route is the package's reference method: it is quadrature-accurate and
supplies oracles for all coarser solvers.  In 2D no such reduction exists and
d(.,y) is obtained by evolving cone-shaped initial data to stationarity,
which inherits the O(h) smearing of the time-marching scheme.

The maximal subsolution below u0 is computed from the distance bank via

    u0^-(x) = min_z ( u0(z) + d(x,z) ),

which is exact at the level of the discrete distance matrix (the discrete
triangle inequality holds exactly because arcs compose additively).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, TorusGrid
from .hamiltonian import HamiltonianModel, _critical_radius, lipschitz_bound
from .hj_solver import SchemeConfig, Stepper, _evolve_stationary

__all__ = [
    "CriticalPotential",
    "DistanceBank",
    "distance_1d",
    "distance_field",
    "distance_matrix",
    "distance_bank",
    "maximal_subsolution",
    "is_subsolution",
]

DEFAULT_QUAD_POINTS = 2000


class ConeCapError(RuntimeError):
    """The cone cap clipped the distance field (cap below max d)."""


@dataclass(frozen=True)
class CriticalPotential:
    """Distance field d(., y) for one base point, with its provenance."""

    y: tuple[float, ...]
    field: GridFunction
    method: str  # "quadrature-1d" | "time-marching-2d"
    residual: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def _roots_at(model: HamiltonianModel, xs: np.ndarray) -> np.ndarray:
    """|p| root of H(x, p) = 0 at the sample points (vectorized bisection)."""
    v = np.asarray(model.V(xs), dtype=float)
    return _critical_radius(model, v, tol=1e-12)


def _arc_integral(model: HamiltonianModel, start: float, length: float, n: int) -> float:
    """Midpoint quadrature of the root magnitude over a rightward arc."""
    if length <= 0.0:
        return 0.0
    mids = (start + (np.arange(n) + 0.5) * (length / n)) % 1.0
    return float(np.sum(_roots_at(model, mids))) * (length / n)


def distance_1d(model: HamiltonianModel, x: float, y: float,
                quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """d(x,y) in 1D: minimum of the two arc integrals of the momentum roots.

    Moving rightward from y to x charges p+(z); the complementary arc charges
    -p-(z).  For the mechanical family both integrands equal the root
    magnitude, but the two arcs differ.
    """
    if model.dim != 1:
        raise ValueError("distance_1d requires a 1D model")
    x, y = float(x) % 1.0, float(y) % 1.0
    right = (x - y) % 1.0
    left = (y - x) % 1.0
    i_right = _arc_integral(model, y, right, quad_points)
    i_left = _arc_integral(model, x, left, quad_points)
    return min(i_right, i_left)


def _cumulative_tables(model: HamiltonianModel, grid: TorusGrid,
                       quad_points: int = DEFAULT_QUAD_POINTS):
    """Cumulative arc integrals of p+ and -p- on a sub-node quadrature mesh.

    Returns (fine edge coordinates, cumulative of p+, cumulative of -p-).
    Node values are exact composite-midpoint sums, so distances assembled from
    these tables agree with :func:`distance_1d` at matched resolution.
    """
    n = grid.shape[0]
    sub = max(1, int(np.ceil(quad_points / n)))
    fine = n * sub
    mids = (np.arange(fine) + 0.5) / fine
    roots = _roots_at(model, mids)
    # mechanical family: p+ = -p- = root magnitude
    cum = np.concatenate(([0.0], np.cumsum(roots) / fine))
    edges = np.arange(fine + 1) / fine
    return edges, cum, cum.copy(), sub


def distance_matrix(model: HamiltonianModel, grid: TorusGrid,
                    quad_points: int = DEFAULT_QUAD_POINTS) -> np.ndarray:
    """D[i, j] = d(x_i, x_j) for all node pairs, assembled in O(N) quadrature."""
    _, cum_p, cum_m, sub = _cumulative_tables(model, grid, quad_points)
    n = grid.shape[0]
    node_p = cum_p[::sub][: n + 1]
    node_m = cum_m[::sub][: n + 1]
    tot_p, tot_m = cum_p[-1], cum_m[-1]
    pi = node_p[:n]
    # rightward arc from x_j to x_i, wrap cost added where i < j
    right = pi[:, None] - pi[None, :]
    right += tot_p * (right < -1e-15)
    mi = node_m[:n]
    left = mi[None, :] - mi[:, None]
    left += tot_m * (left < -1e-15)
    d = np.minimum(right, left)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class DistanceBank:
    """Distance fields d(., z) for a collection of base nodes z.

    ``matrix`` has one column per base: matrix[i, k] = d(x_i, z_k).
    """

    grid: TorusGrid
    base_indices: tuple[tuple[int, ...], ...]
    matrix: np.ndarray
    method: str

    @property
    def base_points(self) -> np.ndarray:
        pts = []
        for idx in self.base_indices:
            pts.append([i / n for i, n in zip(idx, self.grid.shape)])
        return np.array(pts)

    def base_flat(self) -> np.ndarray:
        """Flat node index of each base point."""
        if self.grid.dim == 1:
            return np.array([i[0] for i in self.base_indices])
        ncols = self.grid.shape[1]
        return np.array([i * ncols + j for i, j in self.base_indices])

    def potential(self, k: int) -> CriticalPotential:
        vals = self.matrix[:, k].reshape(self.grid.shape)
        return CriticalPotential(
            y=tuple(self.base_points[k]), field=GridFunction(self.grid, vals),
            method=self.method,
        )


def distance_bank(model: HamiltonianModel, grid: TorusGrid,
                  base_indices=None, quad_points: int = DEFAULT_QUAD_POINTS,
                  config: SchemeConfig | None = None) -> DistanceBank:
    """Build d(., z) for every requested base node (default: all nodes in 1D).

    In 2D the bank is restricted to a subsampled base lattice (time-marching
    per base point is the dominant cost); interpolating between base points
    adds an extra error of at most Lambda * h_sub.
    """
    if model.dim == 1:
        dmat = distance_matrix(model, grid, quad_points)
        if base_indices is None:
            base_indices = tuple((i,) for i in range(grid.shape[0]))
        cols = [dmat[:, idx[0]] for idx in base_indices]
        return DistanceBank(grid, tuple(base_indices), np.column_stack(cols),
                            "quadrature-1d")
    if base_indices is None:
        stride = max(1, grid.shape[0] // 8)
        base_indices = tuple(
            (i, j) for i in range(0, grid.shape[0], stride)
            for j in range(0, grid.shape[1], stride)
        )
    cols = []
    for idx in base_indices:
        y = tuple(i / n for i, n in zip(idx, grid.shape))
        pot = distance_field(model, y, grid, config=config)
        cols.append(pot.values.reshape(-1))
    return DistanceBank(grid, tuple(base_indices), np.column_stack(cols),
                        "time-marching-2d")


def _torus_dist(grid: TorusGrid, y) -> np.ndarray:
    mesh = grid.meshgrid()
    sq = np.zeros(grid.shape)
    for a, m in enumerate(mesh):
        delta = np.abs(m - y[a] % 1.0)
        delta = np.minimum(delta, 1.0 - delta)
        sq += delta**2
    return np.sqrt(sq)


def distance_field(model: HamiltonianModel, y, grid: TorusGrid,
                   config: SchemeConfig | None = None,
                   quad_points: int = DEFAULT_QUAD_POINTS,
                   mather_nodes=None) -> CriticalPotential:
    """d(., y) on the whole grid.

    1D: cumulative quadrature on the momentum roots (reference accuracy).
    2D: evolve the capped cone min(Lambda*dist(x,y), Lambda/2) to stationarity
    and subtract the value at y.  The result equals d(., y) when y lies in the
    projected Mather set; a warning is emitted if ``mather_nodes`` are supplied
    and y is far from all of them.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lam = lipschitz_bound(model)
    if mather_nodes is not None and len(mather_nodes):
        pts = np.atleast_2d(np.asarray(mather_nodes, dtype=float))
        delta = np.abs(pts - y[None, :])
        delta = np.minimum(delta, 1.0 - delta)
        if np.min(np.sqrt((delta**2).sum(axis=1))) > 0.05:
            warnings.warn(
                "base point is far from the projected Mather set; the "
                "time-marched field solves the critical equation only away "
                "from the base point", stacklevel=2,
            )

    if model.dim == 1:
        edges, cum_p, cum_m, _ = _cumulative_tables(model, grid, quad_points)
        xs = grid.axes()[0]
        p_at = np.interp(xs, edges, cum_p)
        p_y = np.interp(y[0] % 1.0, edges, cum_p)
        tot_p = cum_p[-1]
        right = p_at - p_y
        right += tot_p * (right < -1e-15)
        m_at = np.interp(xs, edges, cum_m)
        m_y = np.interp(y[0] % 1.0, edges, cum_m)
        tot_m = cum_m[-1]
        left = m_y - m_at
        left += tot_m * (left < -1e-15)
        vals = np.minimum(right, left)
        i_near = grid.nearest_node(y)
        if abs(xs[i_near[0]] - y[0] % 1.0) < 1e-12:
            vals[i_near[0]] = 0.0
        _check_cap(vals, lam)
        return CriticalPotential(y=(float(y[0] % 1.0),),
                                 field=GridFunction(grid, vals),
                                 method="quadrature-1d")

    cap = 0.5 * lam
    u0 = GridFunction(grid, np.minimum(lam * _torus_dist(grid, y), cap))
    cfg = config if config is not None else SchemeConfig(model, grid, T=60)
    vals, _, converged, deviation, _, _ = _evolve_stationary(
        model, cfg, u0, tol=1e-6
    )
    base_val = GridFunction(grid, vals).interp(y)
    vals = vals - base_val
    _check_cap(vals, lam)
    return CriticalPotential(y=tuple(float(c % 1.0) for c in y),
                             field=GridFunction(grid, vals),
                             method="time-marching-2d",
                             residual=deviation if not converged else 0.0)


def _check_cap(vals: np.ndarray, lam: float):
    cap = 0.5 * lam
    if float(np.max(vals)) > cap * (1.0 - 1e-9) and cap > 0:
        raise ConeCapError(
            f"max d = {float(np.max(vals)):.6g} reaches the cone cap {cap:.6g}; "
            "increase the cap"
        )


def maximal_subsolution(model: HamiltonianModel, u0: GridFunction,
                        bank: DistanceBank) -> GridFunction:
    """Largest subsolution below u0: node-wise min_z ( u0(z) + d(x,z) ).

    Idempotent and dominated by u0 exactly, by the discrete triangle
    inequality of the distance bank.
    """
    u0_at_bases = u0.values.reshape(-1)[bank.base_flat()]
    vals = np.min(bank.matrix + u0_at_bases[None, :], axis=1)
    return GridFunction(u0.grid, vals.reshape(u0.grid.shape))


def is_subsolution(model: HamiltonianModel, v: GridFunction,
                   tol: float | None = None) -> tuple[bool, float]:
    """Check H(x, Dv) <= tol at every node.

    Uses the scheme's numerical Hamiltonian at zero dissipation, which for
    Lax-Friedrichs coincides with the central difference.  Discrete kinks of
    genuine subsolutions contribute O(h), hence the default tol = 5h.
    """
    if tol is None:
        tol = 5.0 * min(v.grid.spacing)
    cfg = SchemeConfig(model, v.grid, T=1.0, theta="auto")
    stepper = Stepper(model, cfg)
    # zero-dissipation numerical Hamiltonian: central-difference H, no jumps
    vals = v.values
    kin = np.zeros_like(vals)
    for axis, h in enumerate(v.grid.spacing):
        central = (np.roll(vals, -1, axis=axis) - np.roll(vals, 1, axis=axis)) / (2 * h)
        kin += central * central
    ham = 0.5 * kin + stepper.v_pot
    violation = float(np.max(ham))
    return violation <= tol, violation
