"""Adjoint transport route to approximate Mather measures.

Along a stored trajectory of the regularized problem
eps*u_t + H(x,Du) = eps^4*Lap(u), the adjoint density solves the
conservative advection-diffusion equation

    -eps*sigma_t - div( D_pH(x, Du) sigma ) = eps^4*Lap(sigma)  (+ Lap(a sigma))

backward in time from a Dirac terminal mass.  Integrated backward
(equivalently forward in reversed time) with donor-cell upwind fluxes, the
discrete update conserves total mass exactly (the flux sums telescope on the
torus) and keeps sigma nonnegative under its own CFL condition; both
properties are load-bearing, since sigma is used as a probability density.

Occupation of the trajectory then defines a measure on position x velocity
space: each (node, time) pair deposits sigma*h^dim*dt of mass at velocity
v = D_pH(x, Du) with two-point linear splitting between neighboring velocity
cells.  As eps -> 0 these measures converge to minimizers of the average
action, which is what the tests exercise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, TorusGrid, VelocityGrid, integrate
from .hamiltonian import HamiltonianModel, eval_L, lipschitz_bound
from .hj_solver import RegularizedResult

__all__ = [
    "AdjointTrajectory",
    "DiscreteMeasure",
    "solve_adjoint",
    "build_measure",
    "comparison_functional",
    "holonomy_residual",
    "default_velocity_grid",
    "MeasureOverflowError",
]

MASS_TOL = 1e-8
NEG_TOL = 1e-8


class MeasureOverflowError(RuntimeError):
    """More than 1% of deposited mass fell outside the velocity truncation."""


@dataclass
class AdjointTrajectory:
    """Adjoint density per stored time level, nonnegative with unit mass."""

    grid: TorusGrid
    sigmas: np.ndarray  # (n_levels, *grid.shape), sigmas[n] at time t_n
    times: np.ndarray
    x0_index: tuple[int, ...]
    epsilon: float
    min_value: float
    mass_error: float

    def sigma(self, n: int) -> GridFunction:
        return GridFunction(self.grid, self.sigmas[n])


@dataclass
class DiscreteMeasure:
    """Nonnegative weights on (position grid) x (velocity grid), total mass 1."""

    grid: TorusGrid
    vgrid: VelocityGrid
    weights: np.ndarray  # shape grid.shape + (m,)*dim
    mass_defect: float = 0.0
    velocity_overflow: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        self.weights = w
        if np.min(w) < -NEG_TOL:
            raise ValueError(f"negative measure weight {np.min(w):.3e}")
        total = float(np.sum(w))
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"measure mass {total} differs from 1 beyond {MASS_TOL}")

    @property
    def dim(self) -> int:
        return self.grid.dim

    def position_marginal(self) -> np.ndarray:
        """Mass per position node (sums over velocity axes)."""
        axes = tuple(range(self.grid.dim, self.weights.ndim))
        return self.weights.sum(axis=axes)

    def velocity_marginal(self) -> np.ndarray:
        axes = tuple(range(self.grid.dim))
        return self.weights.sum(axis=axes)

    def action(self, model: HamiltonianModel) -> float:
        """Average Lagrangian action integral L d(mu)."""
        return float(np.sum(self.weights * _lagrangian_table(model, self.grid, self.vgrid)))

    def support_cells(self, cutoff: float = 0.0):
        idx = np.argwhere(self.weights > cutoff)
        return [tuple(i) for i in idx]

    def to_csv(self) -> str:
        """CSV ``x[,y],v[x,vy],weight`` over nonzero cells, node order."""
        lines = []
        vnodes = self.vgrid.nodes
        axes = self.grid.axes()
        if self.dim == 1:
            lines.append("x,v,weight")
            for i, j in np.argwhere(self.weights > 0.0):
                lines.append(f"{axes[0][i]:.17g},{vnodes[j]:.17g},{self.weights[i, j]:.17g}")
        else:
            lines.append("x,y,vx,vy,weight")
            for i, j, k, l in np.argwhere(self.weights > 0.0):
                lines.append(
                    f"{axes[0][i]:.17g},{axes[1][j]:.17g},{vnodes[k]:.17g},"
                    f"{vnodes[l]:.17g},{self.weights[i, j, k, l]:.17g}"
                )
        return "\n".join(lines) + "\n"


def _lagrangian_table(model: HamiltonianModel, grid: TorusGrid,
                      vgrid: VelocityGrid) -> np.ndarray:
    """L(x_i, v_j) on the product grid."""
    vnodes = vgrid.nodes
    if grid.dim == 1:
        xs = grid.axes()[0]
        return eval_L(model, xs[:, None], vnodes[None, :])
    mx, my = grid.meshgrid()
    vx = vnodes[None, None, :, None]
    vy = vnodes[None, None, None, :]
    kin = 0.5 * (vx**2 + vy**2)
    pot = (-model.V(mx, my) + model.shift)[:, :, None, None]
    return kin + pot


def default_velocity_grid(model: HamiltonianModel, m_points: int = 41) -> VelocityGrid:
    """Truncation radius 1.25x the model's momentum bound (D_pH = p here)."""
    return VelocityGrid(v_max=1.25 * lipschitz_bound(model), m_points=m_points)


def _central_gradients(vals: np.ndarray, spacing) -> list[np.ndarray]:
    return [
        (np.roll(vals, -1, axis=a) - np.roll(vals, 1, axis=a)) / (2.0 * h)
        for a, h in enumerate(spacing)
    ]


def _transport_rhs(sigma: np.ndarray, c_faces: list[np.ndarray], spacing,
                   diff_const: float, a_vals: np.ndarray | None):
    """d(sigma)/d(tau) for the reversed-time equation, flux form.

    c_faces[a][..i..] is the reversed-time face velocity between node i and
    i+1 along axis a; donor-cell upwinding selects the upwind cell per face.
    The diffusion terms Lap(diff_const*sigma + a*sigma) telescope exactly.
    """
    out = np.zeros_like(sigma)
    for a, h in enumerate(spacing):
        cf = c_faces[a]
        flux = np.maximum(cf, 0.0) * sigma + np.minimum(cf, 0.0) * np.roll(sigma, -1, axis=a)
        out -= (flux - np.roll(flux, 1, axis=a)) / h
    diffused = diff_const * sigma if a_vals is None else (diff_const + a_vals) * sigma
    for a, h in enumerate(spacing):
        out += (np.roll(diffused, -1, axis=a) - 2.0 * diffused + np.roll(diffused, 1, axis=a)) / h**2
    return out


def transport_transpose(phi: np.ndarray, c_faces: list[np.ndarray], spacing,
                        diff_const: float, a_vals: np.ndarray | None):
    """Exact transpose of :func:`_transport_rhs` acting on a test field.

    sum_k phi_k * T[sigma]_k == sum_k sigma_k * T*[phi]_k up to round-off;
    the discrete integration-by-parts identity behind the measure route.
    """
    out = np.zeros_like(phi)
    for a, h in enumerate(spacing):
        cf = c_faces[a]
        dphi = (np.roll(phi, -1, axis=a) - phi) / h  # face i+1/2
        out += np.maximum(cf, 0.0) * dphi + np.roll(np.minimum(cf, 0.0) * dphi, 1, axis=a)
    lap_phi = np.zeros_like(phi)
    for a, h in enumerate(spacing):
        lap_phi += (np.roll(phi, -1, axis=a) - 2.0 * phi + np.roll(phi, 1, axis=a)) / h**2
    out += diff_const * lap_phi if a_vals is None else (diff_const + a_vals) * lap_phi
    return out


def _face_velocities(drift: list[np.ndarray], epsilon: float) -> list[np.ndarray]:
    # reversed-time velocity is -drift/eps; faces average the two cells
    return [-(b + np.roll(b, -1, axis=a)) / (2.0 * epsilon) for a, b in enumerate(drift)]


def solve_adjoint(model: HamiltonianModel, u_eps: RegularizedResult, x0,
                  epsilon: float | None = None) -> AdjointTrajectory:
    """Integrate the adjoint density backward along the stored trajectory.

    The terminal Dirac mass is a single-cell density 1/h^dim at the node
    nearest x0.  Each stored step is subdivided as needed to satisfy the
    transport CFL condition; drift momenta are central differences of the
    stored fields.
    """
    grid = TorusGrid(u_eps.trajectory.shape[1:])
    eps = u_eps.epsilon if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("adjoint solve needs the regularized trajectory (epsilon > 0)")
    spacing = grid.spacing
    cell = float(np.prod(spacing))
    a_vals = None
    if u_eps.viscous and model.diffusion is not None:
        a_vals = np.asarray(model.diffusion(*grid.meshgrid()), dtype=float) * np.ones(grid.shape)
        a_vals = a_vals / eps
    diff_const = eps**3  # eps^4 / eps after the time rescaling

    idx = grid.nearest_node(x0) if not isinstance(x0, tuple) or isinstance(x0[0], float) \
        else tuple(x0)
    if isinstance(x0, tuple) and all(isinstance(i, (int, np.integer)) for i in x0):
        idx = tuple(int(i) % n for i, n in zip(x0, grid.shape))
    sigma = np.zeros(grid.shape)
    sigma[idx] = 1.0 / cell

    traj = u_eps.trajectory
    n_levels = traj.shape[0]
    dt = float(u_eps.times[1] - u_eps.times[0])
    sigmas = np.empty_like(traj)
    sigmas[-1] = sigma

    max_a = float(np.max(a_vals)) if a_vals is not None else 0.0
    min_sigma = 0.0
    for n in range(n_levels - 1, 0, -1):
        drift = _central_gradients(traj[n], spacing)
        c_faces = _face_velocities(drift, eps)
        speed = sum(float(np.max(np.abs(c))) / h for c, h in zip(c_faces, spacing))
        diffusion_rate = sum(2.0 * (diff_const + max_a) / h**2 for h in spacing)
        n_sub = max(1, math.ceil((speed + diffusion_rate) * dt / 0.9))
        d_tau = dt / n_sub
        for _ in range(n_sub):
            sigma = sigma + d_tau * _transport_rhs(sigma, c_faces, spacing, diff_const, a_vals)
        sigmas[n - 1] = sigma
        min_sigma = min(min_sigma, float(np.min(sigma)))

    masses = sigmas.sum(axis=tuple(range(1, sigmas.ndim))) * cell
    mass_error = float(np.max(np.abs(masses - 1.0)))
    if mass_error > MASS_TOL:
        raise RuntimeError(f"adjoint mass drifted by {mass_error:.3e}")
    if min_sigma < -NEG_TOL:
        raise RuntimeError(f"adjoint density went negative: min sigma = {min_sigma:.3e}")
    return AdjointTrajectory(
        grid=grid, sigmas=sigmas, times=u_eps.times.copy(), x0_index=idx,
        epsilon=eps, min_value=min_sigma, mass_error=mass_error,
    )


def build_measure(model: HamiltonianModel, u_eps: RegularizedResult,
                  sigma: AdjointTrajectory,
                  vgrid: VelocityGrid | None = None) -> DiscreteMeasure:
    """Occupation measure of (position, Du) weighted by the adjoint density.

    Time integration is trapezoidal over the stored levels; velocities are
    split linearly between the two neighboring velocity nodes (the splitting
    preserves the mean velocity, keeping the holonomy defect first order in
    the velocity spacing).  Mass falling outside the truncation is clipped
    into the boundary cell and reported; above 1% it is an error.
    """
    if vgrid is None:
        vgrid = default_velocity_grid(model)
    grid = sigma.grid
    cell = float(np.prod(grid.spacing))
    n_levels = sigma.sigmas.shape[0]
    dt = float(sigma.times[1] - sigma.times[0])
    m = vgrid.m_points
    dim = grid.dim

    weights = np.zeros(grid.shape + (m,) * dim)
    overflow = 0.0
    for n in range(n_levels):
        wt = dt * (0.5 if n in (0, n_levels - 1) else 1.0)
        mass = sigma.sigmas[n] * cell * wt
        vel = _central_gradients(u_eps.trajectory[n], grid.spacing)
        t_axes, lo_axes, fr_axes = [], [], []
        for v in vel:
            t = (v + vgrid.v_max) / vgrid.dv
            lo = np.floor(t).astype(int)
            frac = t - lo
            below = lo < 0
            above = lo > m - 2
            overflow += float(np.sum(mass * (below | above)))
            lo = np.clip(lo, 0, m - 2)
            frac = np.where(below, 0.0, np.where(above, 1.0, frac))
            lo_axes.append(lo)
            fr_axes.append(frac)
        if dim == 1:
            np.add.at(weights, (np.arange(grid.shape[0]), lo_axes[0]), mass * (1 - fr_axes[0]))
            np.add.at(weights, (np.arange(grid.shape[0]), lo_axes[0] + 1), mass * fr_axes[0])
        else:
            ii, jj = np.meshgrid(*[np.arange(s) for s in grid.shape], indexing="ij")
            for da, wa in ((0, 1 - fr_axes[0]), (1, fr_axes[0])):
                for db, wb in ((0, 1 - fr_axes[1]), (1, fr_axes[1])):
                    np.add.at(weights, (ii, jj, lo_axes[0] + da, lo_axes[1] + db),
                              mass * wa * wb)

    total = float(np.sum(weights))
    mass_defect = abs(total - 1.0)
    if overflow > 0.01:
        raise MeasureOverflowError(
            f"{overflow:.2%} of the mass had velocities outside the truncation"
        )
    weights = np.maximum(weights, 0.0) / total
    return DiscreteMeasure(grid, vgrid, weights, mass_defect=mass_defect,
                           velocity_overflow=overflow)


def comparison_functional(w1: GridFunction, w2: GridFunction,
                          mu: DiscreteMeasure) -> float:
    """Integral of (w1 - w2) against the position marginal of mu."""
    if w1.grid.shape != w2.grid.shape or w1.grid.shape != mu.grid.shape:
        raise ValueError("fields and measure must share one grid")
    return float(np.sum((w1.values - w2.values) * mu.position_marginal()))


def _fourier_basis(grid: TorusGrid, max_freq: int = 4):
    axes = grid.meshgrid()
    basis = []
    for a in range(grid.dim):
        for k in range(1, max_freq + 1):
            basis.append(np.cos(2 * np.pi * k * axes[a]) * np.ones(grid.shape))
            basis.append(np.sin(2 * np.pi * k * axes[a]) * np.ones(grid.shape))
    return basis


def holonomy_residual(model: HamiltonianModel, mu: DiscreteMeasure,
                      test_basis: str = "fourier", max_freq: int = 4,
                      viscous: bool = False) -> float:
    """Largest violation of the holonomy constraint over a test-function basis.

    Tests integral of v.Dphi (minus a*Lap(phi) in the viscous variant)
    against mu.  ``fourier`` uses fixed low-frequency modes: their derivatives
    stay bounded as the grid refines, so the residual tracks the genuine
    weak-* defect of the measure.  ``hats`` re-evaluates the exact LP
    constraint rows (unbounded derivatives as h -> 0; useful for consistency
    checks against the LP route, not as a convergence diagnostic).
    """
    if test_basis == "hats":
        from .mather_lp import holonomy_rows

        a_vals = None
        if viscous:
            if model.diffusion is None:
                raise ValueError("viscous residual requested but model has no diffusion")
            mesh = mu.grid.meshgrid()
            a_vals = np.asarray(model.diffusion(*mesh), dtype=float) * np.ones(mu.grid.shape)
        rows = holonomy_rows(mu.grid, mu.vgrid, a_vals)
        return float(np.max(np.abs(rows @ mu.weights.reshape(-1))))

    vnodes = mu.vgrid.nodes
    spacing = mu.grid.spacing
    dim = mu.grid.dim
    worst = 0.0
    for phi in _fourier_basis(mu.grid, max_freq):
        lap_phi = np.zeros_like(phi)
        for a, h in enumerate(spacing):
            lap_phi += (np.roll(phi, -1, axis=a) - 2 * phi + np.roll(phi, 1, axis=a)) / h**2
        total = 0.0
        for a, h in enumerate(spacing):
            dphi_fwd = (np.roll(phi, -1, axis=a) - phi) / h      # face i+1/2
            dphi_bwd = np.roll(dphi_fwd, 1, axis=a)              # face i-1/2
            if dim == 1:
                vp = np.maximum(vnodes, 0.0)[None, :]
                vm = np.minimum(vnodes, 0.0)[None, :]
                total += float(np.sum(mu.weights * (vp * dphi_bwd[:, None] + vm * dphi_fwd[:, None])))
            else:
                shape_v = [1, 1, 1, 1]
                shape_v[2 + a] = len(vnodes)
                vv = vnodes.reshape(shape_v)
                vp, vm = np.maximum(vv, 0.0), np.minimum(vv, 0.0)
                total += float(np.sum(mu.weights * (vp * dphi_bwd[..., None, None]
                                                    + vm * dphi_fwd[..., None, None])))
        if viscous:
            if model.diffusion is None:
                raise ValueError("viscous residual requested but model has no diffusion")
            mesh = mu.grid.meshgrid()
            a_vals = np.asarray(model.diffusion(*mesh), dtype=float) * np.ones(mu.grid.shape)
            marg = mu.position_marginal()
            total -= float(np.sum(marg * a_vals * lap_phi))
        worst = max(worst, abs(total))
    return worst
