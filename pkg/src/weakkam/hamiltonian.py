"""Mechanical Hamiltonians H(x,p) = |p|^2/2 + V(x) - shift on the torus.

The potential V and the (optional, scalar) diffusion coefficient a(x) are
trigonometric polynomials, so all derivatives, the Legendre transform

    L(x,v) = sup_p (p.v - H(x,p)) = |v|^2/2 - V(x) + shift,

and the zero-level momentum roots H(x,p) = 0 are available in closed form.
That makes this family the oracle supply for every solver in the package:
uniform convexity in p holds with constant 1, superlinearity is automatic,
and power-growth bounds hold with exponent 2.

The ``shift`` is an explicit normalization: subtracting the ergodic constant
of the un-shifted Hamiltonian makes the critical value 0, which is the gauge
all downstream theory checks assume.  Models never auto-normalize; callers
adjust the shift (typically from ``hj_solver.ergodic_solve``).
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "TrigPoly",
    "DiffusionCoefficient",
    "HamiltonianModel",
    "ModelAudit",
    "eval_H",
    "eval_DpH",
    "eval_DxH",
    "eval_L",
    "legendre_numeric",
    "critical_p_interval",
    "lipschitz_bound",
    "audit_model",
    "load_model",
    "dump_model",
    "pendulum",
    "double_well",
    "flat",
]

_AUDIT_POINTS = 4096  # per-axis sampling for sign/extremum audits

# hardware floor on the scheme dissipation; flat potentials give a zero
# momentum bound otherwise and the Lax-Friedrichs step degenerates
_LIPSCHITZ_FLOOR = 1.0
_LIPSCHITZ_MARGIN = 1.1


class ModelError(ValueError):
    """Malformed model description."""


class RootError(RuntimeError):
    """No real momentum root: the model is not normalized (shift < V(x))."""


class LegendreRangeError(RuntimeError):
    """Brute-force Legendre maximizer hit the search boundary."""


@dataclass(frozen=True)
class TrigPoly:
    """Real trigonometric polynomial sum_k [c_k cos(2pi k.x) + s_k sin(2pi k.x)].

    ``terms`` is a tuple of (k, cos_amp, sin_amp) with k an integer frequency
    vector of length dim.  Empty terms mean the zero function.
    """

    dim: int
    terms: tuple[tuple[tuple[int, ...], float, float], ...] = ()

    def __post_init__(self):
        norm = []
        for k, c, s in self.terms:
            k = tuple(int(ki) for ki in np.atleast_1d(k))
            if len(k) != self.dim:
                raise ModelError(f"frequency {k} has wrong length for dim={self.dim}")
            norm.append((k, float(c), float(s)))
        object.__setattr__(self, "terms", tuple(norm))

    def __call__(self, *x):
        x = self._axes(x)
        out = np.zeros(np.broadcast(*x).shape) if x[0].ndim else 0.0
        for k, c, s in self.terms:
            phase = 2.0 * np.pi * sum(ki * xi for ki, xi in zip(k, x))
            out = out + c * np.cos(phase) + s * np.sin(phase)
        return out if self.terms else np.zeros(np.broadcast(*x).shape)

    def grad(self, *x) -> tuple:
        x = self._axes(x)
        comps = []
        for axis in range(self.dim):
            g = np.zeros(np.broadcast(*x).shape)
            for k, c, s in self.terms:
                if k[axis] == 0:
                    continue
                phase = 2.0 * np.pi * sum(ki * xi for ki, xi in zip(k, x))
                g = g + 2.0 * np.pi * k[axis] * (-c * np.sin(phase) + s * np.cos(phase))
            comps.append(g)
        return tuple(comps)

    def _axes(self, x):
        if len(x) == 1 and self.dim > 1:
            x = tuple(np.asarray(xi, dtype=float) for xi in x[0])
        else:
            x = tuple(np.asarray(xi, dtype=float) for xi in x)
        if len(x) != self.dim:
            raise ModelError(f"expected {self.dim} coordinate arrays, got {len(x)}")
        return x

    def sampled_extrema(self, n: int = _AUDIT_POINTS) -> tuple[float, float]:
        """(min, max) over a fine per-axis audit grid."""
        axes = [np.arange(n) / n for _ in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        vals = self(*mesh)
        return float(np.min(vals)), float(np.max(vals))


def _trig_from_spec(entries, dim: int) -> TrigPoly:
    terms = []
    for e in entries:
        terms.append((tuple(e["k"]), float(e.get("cos", 0.0)), float(e.get("sin", 0.0))))
    return TrigPoly(dim, tuple(terms))


def _trig_to_spec(p: TrigPoly) -> list[dict]:
    return [{"k": list(k), "cos": c, "sin": s} for k, c, s in p.terms]


@dataclass(frozen=True)
class DiffusionCoefficient:
    """Scalar diffusion coefficient a(x) >= 0 defining A(x) = a(x) * Identity.

    Nonnegativity is audited on a fine grid at construction; a is C^2 by
    construction (trigonometric polynomial).
    """

    a: TrigPoly

    def __post_init__(self):
        lo, hi = self.a.sampled_extrema()
        if lo < -1e-12:
            raise ModelError(f"diffusion coefficient is negative (min {lo:.3e} on audit grid)")
        object.__setattr__(self, "_max", max(hi, 0.0))

    @property
    def max_value(self) -> float:
        return self._max

    def __call__(self, *x):
        return self.a(*x)


@dataclass(frozen=True)
class HamiltonianModel:
    """Mechanical model H(x,p) = |p|^2/2 + V(x) - shift.

    D^2_pp H = Identity, so uniform convexity holds with constant 1 and the
    growth exponent in the coercivity bounds is 2.
    """

    V: TrigPoly
    shift: float = 0.0
    diffusion: DiffusionCoefficient | None = None

    @property
    def dim(self) -> int:
        return self.V.dim

    def potential_extrema(self) -> tuple[float, float]:
        return self.V.sampled_extrema()


def _p_axes(p, dim: int):
    if dim == 1:
        return (np.asarray(p, dtype=float),)
    return tuple(np.asarray(pi, dtype=float) for pi in p)


def eval_H(model: HamiltonianModel, x, p):
    """H(x,p) = |p|^2/2 + V(x) - shift."""
    pax = _p_axes(p, model.dim)
    kin = 0.5 * sum(pi * pi for pi in pax)
    return kin + model.V(x) - model.shift


def eval_DpH(model: HamiltonianModel, x, p):
    """Momentum gradient; for the mechanical family simply p."""
    pax = _p_axes(p, model.dim)
    return pax[0] if model.dim == 1 else pax


def eval_DxH(model: HamiltonianModel, x, p):
    """Space gradient; equals V'(x), independent of p."""
    g = model.V.grad(x) if model.dim == 1 else model.V.grad(*x)
    return g[0] if model.dim == 1 else g


def eval_L(model: HamiltonianModel, x, v):
    """Legendre transform L(x,v) = |v|^2/2 - V(x) + shift (closed form)."""
    vax = _p_axes(v, model.dim)
    kin = 0.5 * sum(vi * vi for vi in vax)
    return kin - model.V(x) + model.shift


def legendre_numeric(model: HamiltonianModel, x, v, p_radius: float = 5.0,
                     p_step: float = 1e-3) -> float:
    """Brute-force Legendre transform: max of p.v - H(x,p) over a p-grid.

    Independent oracle for :func:`eval_L`; fails loudly if the maximizer sits
    on the search boundary (radius too small).  In 2D the dense grid is
    refined multiscale down to ``p_step`` to keep the search affordable.
    """
    if model.dim == 1:
        v = float(np.asarray(v))
        n = int(np.ceil(2.0 * p_radius / p_step)) + 1
        pg = np.linspace(-p_radius, p_radius, n)
        vals = pg * v - eval_H(model, x, pg)
        i = int(np.argmax(vals))
        if i in (0, n - 1):
            raise LegendreRangeError(
                f"Legendre maximizer on p-grid boundary (p_radius={p_radius})"
            )
        return float(vals[i])

    v = np.asarray(v, dtype=float)
    lo = np.full(2, -p_radius)
    hi = np.full(2, p_radius)
    best = None
    first = True
    while True:
        axes = [np.linspace(lo[a], hi[a], 33) for a in range(2)]
        P1, P2 = np.meshgrid(*axes, indexing="ij")
        vals = P1 * v[0] + P2 * v[1] - eval_H(model, x, (P1, P2))
        i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
        if first and (i in (0, 32) or j in (0, 32)):
            raise LegendreRangeError(
                f"Legendre maximizer on p-grid boundary (p_radius={p_radius})"
            )
        first = False
        best = float(vals[i, j])
        step = axes[0][1] - axes[0][0]
        if step <= p_step:
            return best
        center = np.array([axes[0][i], axes[1][j]])
        lo = center - 2 * step
        hi = center + 2 * step


def _critical_radius(model: HamiltonianModel, v_vals: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized bisection for the |p|-root of |p|^2/2 + V - shift = 0.

    ``v_vals`` are potential values V(x) at the query points.  Uses only sign
    evaluations of H, so it stays valid for any p-even convex kinetic term.
    """
    s = model.shift - v_vals
    bad = s < -tol
    if np.any(bad):
        raise RootError(
            f"no real momentum root: shift - V(x) = {float(np.min(s)):.3e} < 0 "
            "(model not normalized)"
        )
    s = np.maximum(s, 0.0)
    vmin, _ = model.potential_extrema()
    bracket = 1.0 + np.sqrt(2.0 * max(model.shift - vmin, 0.0))
    lo = np.zeros_like(s)
    hi = np.full_like(s, bracket)
    n_iter = int(np.ceil(np.log2(bracket / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        high = 0.5 * mid * mid - s > 0.0
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
    return 0.5 * (lo + hi)


def critical_p_interval(model: HamiltonianModel, x, tol: float = 1e-10) -> tuple[float, float]:
    """Roots (p_minus, p_plus) of H(x,p) = 0 with p_minus <= 0 <= p_plus (1D).

    Located by bisection inside a coercivity bracket.  Raises :class:`RootError`
    when shift < V(x) beyond ``tol`` (the model is not normalized there).
    """
    if model.dim != 1:
        raise ModelError("critical_p_interval is defined for 1D models only")
    v = np.asarray(model.V(x), dtype=float)
    r = _critical_radius(model, v, tol)
    p_plus = float(r) if r.ndim == 0 else r
    return (-p_plus, p_plus) if np.ndim(p_plus) == 0 else (-p_plus, p_plus)


@functools.lru_cache(maxsize=64)
def lipschitz_bound(model: HamiltonianModel) -> float:
    """Gradient bound for solutions of the critical equation, with margin.

    Sup over an audit grid of the momentum-root magnitude, times 1.1, floored
    at 1.0 so scheme dissipation never vanishes for flat potentials.  Used for
    Lax-Friedrichs dissipation and for the velocity-grid truncation.
    """
    if model.dim == 1:
        xs = np.arange(_AUDIT_POINTS) / _AUDIT_POINTS
        v = model.V(xs)
    else:
        n = 512
        ax = np.arange(n) / n
        mx = np.meshgrid(ax, ax, indexing="ij")
        v = model.V(*mx)
    r = _critical_radius(model, np.asarray(v, dtype=float), tol=1e-12)
    return max(_LIPSCHITZ_MARGIN * float(np.max(r)), _LIPSCHITZ_FLOOR)


@functools.lru_cache(maxsize=64)
def evolution_momentum_bound(model: HamiltonianModel) -> float:
    """Gradient bound for long-time evolutions, valid for any shift.

    Stationary states of the evolution live on the level H = c with c the
    model's own ergodic constant, where |Du| = sqrt(2(max V - V)); the bound
    is therefore 1.1 * sqrt(2 * osc V), floored like :func:`lipschitz_bound`.
    For normalized models (shift = max V) the two bounds coincide.
    """
    vmin, vmax = model.potential_extrema()
    return max(_LIPSCHITZ_MARGIN * float(np.sqrt(2.0 * (vmax - vmin))), _LIPSCHITZ_FLOOR)


@dataclass(frozen=True)
class ModelAudit:
    """Sampled coercivity/growth report for a model.

    The growth constants are fitted on samples; they certify the inequalities
    on the audit set only, not globally.
    """

    gamma_growth: float
    growth_constant: float
    lipschitz_bound: float
    normalization_residual: float
    h2_limit_samples: tuple[tuple[float, float], ...]
    h2_limit_monotone: bool

    def to_dict(self) -> dict:
        return {
            "gamma_growth": self.gamma_growth,
            "growth_constant": self.growth_constant,
            "lipschitz_bound": self.lipschitz_bound,
            "normalization_residual": self.normalization_residual,
            "h2_limit_samples": [list(s) for s in self.h2_limit_samples],
            "h2_limit_monotone": self.h2_limit_monotone,
        }


def audit_model(model: HamiltonianModel) -> ModelAudit:
    """Sample the growth bounds C^-1 |p|^g - C <= H <= C(|p|^g + 1), g = 2.

    Also samples the superlinearity-type limit of H^2/2 + DxH.p along a |p|
    ladder (heuristic only: increasing minima are reported, not certified).
    """
    gamma = 2.0
    if model.dim == 1:
        xs = np.arange(256) / 256.0
        x_eval = (xs,)
    else:
        ax = np.arange(32) / 32.0
        x_eval = tuple(np.meshgrid(ax, ax, indexing="ij"))
    v_vals = np.ravel(model.V(*x_eval))

    p_mags = np.array([0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0])
    c_req = 1.0
    for pm in p_mags:
        h = 0.5 * pm**2 + v_vals - model.shift
        c_req = max(c_req, float(np.max(h / (pm**gamma + 1.0))))
        # lower bound needs C with C^2 + H*C - |p|^g >= 0
        c_low = np.max((-h + np.sqrt(h * h + 4.0 * pm**gamma)) / 2.0)
        c_req = max(c_req, float(c_low))

    if model.dim == 1:
        dv = model.V.grad(x_eval[0])[0]
    else:
        dv = np.hypot(*model.V.grad(*x_eval))
    dv = np.ravel(dv)
    samples = []
    for pm in p_mags:
        h = 0.5 * pm**2 + v_vals - model.shift
        # worst case over sign of p alignment with DxH
        expr = 0.5 * h * h - np.abs(dv) * pm
        samples.append((float(pm), float(np.min(expr))))
    mins = [s[1] for s in samples]
    monotone = all(b >= a for a, b in zip(mins, mins[1:]))

    vmin, vmax = model.potential_extrema()
    return ModelAudit(
        gamma_growth=gamma,
        growth_constant=c_req,
        lipschitz_bound=lipschitz_bound(model),
        normalization_residual=abs(model.shift - vmax),
        h2_limit_samples=tuple(samples),
        h2_limit_monotone=monotone,
    )


# ---------------------------------------------------------------------------
# model description files


def model_from_dict(spec: dict) -> HamiltonianModel:
    if spec.get("family") != "mechanical":
        raise ModelError(f"unsupported family {spec.get('family')!r}")
    v_entries = spec.get("V", [])
    if v_entries:
        dim = len(v_entries[0]["k"])
    else:
        dim = int(spec.get("dim", 1))
    V = _trig_from_spec(v_entries, dim)
    diffusion = None
    if spec.get("diffusion"):
        diffusion = DiffusionCoefficient(_trig_from_spec(spec["diffusion"]["a"], dim))
    return HamiltonianModel(V=V, shift=float(spec.get("shift", 0.0)), diffusion=diffusion)


def model_to_dict(model: HamiltonianModel) -> dict:
    out = {"family": "mechanical", "V": _trig_to_spec(model.V), "shift": model.shift}
    if model.dim != 1 and not model.V.terms:
        out["dim"] = model.dim
    if model.diffusion is not None:
        out["diffusion"] = {"a": _trig_to_spec(model.diffusion.a)}
    return out


def load_model(path) -> HamiltonianModel:
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model JSON in {path}: {exc}") from exc
    return model_from_dict(spec)


def dump_model(model: HamiltonianModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


# ---------------------------------------------------------------------------
# built-in models used throughout the tests and docs


def pendulum(shift: float = 1.0, viscous: bool = False) -> HamiltonianModel:
    """V(x) = cos(2 pi x).  shift=1 normalizes the critical value to 0."""
    diff = None
    if viscous:
        # a(x) = sin^2(2 pi x) = 1/2 - cos(4 pi x)/2, degenerate at x = 0, 1/2
        diff = DiffusionCoefficient(
            TrigPoly(1, (((0,), 0.5, 0.0), ((2,), -0.5, 0.0)))
        )
    return HamiltonianModel(V=TrigPoly(1, (((1,), 1.0, 0.0),)), shift=shift, diffusion=diff)


def double_well(shift: float = 1.0) -> HamiltonianModel:
    """V(x) = cos(4 pi x): two potential maxima at x = 0 and x = 1/2."""
    return HamiltonianModel(V=TrigPoly(1, (((2,), 1.0, 0.0),)), shift=shift)


def flat(dim: int = 1) -> HamiltonianModel:
    """V = 0, shift = 0: every constant solves the critical equation."""
    return HamiltonianModel(V=TrigPoly(dim, ()), shift=0.0)
