"""Uniform periodic grids on the unit torus and the discrete calculus on them.

Everything downstream (finite-difference solvers, transport equations, the
occupation-measure LP) shares these operators, so they are kept deliberately
small: periodic shifts via ``np.roll``, exact telescoping sums, and a fixed
summation order so results are bit-reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TorusGrid",
    "GridFunction",
    "VelocityGrid",
    "diff",
    "laplacian",
    "integrate",
]


class GridError(ValueError):
    """Raised for malformed grids or grid/value mismatches."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus [0,1)^dim, dim in {1, 2}.

    ``shape`` holds the number of nodes per axis; the spacing per axis is
    exactly 1/N and index arithmetic is modulo N everywhere.
    """

    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (1, 2):
            raise GridError(f"only 1D/2D tori are supported, got dim={len(shape)}")
        if any(n < 8 for n in shape):
            raise GridError(f"need at least 8 nodes per axis, got {shape}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> tuple[np.ndarray, ...]:
        """Node coordinates per axis, x_i = i/N."""
        return tuple(np.arange(n) / n for n in self.shape)

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def nearest_node(self, point) -> tuple[int, ...]:
        """Index of the grid node closest to ``point`` (periodic)."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.size != self.dim:
            raise GridError(f"point has {pt.size} coordinates, grid is {self.dim}D")
        return tuple(int(round(pt[a] * n)) % n for a, n in enumerate(self.shape))


@dataclass(frozen=True)
class GridFunction:
    """Scalar field sampled on the nodes of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != self.grid.shape:
            raise GridError(
                f"values shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("grid function contains non-finite values")

    @classmethod
    def from_callable(cls, grid: TorusGrid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(*grid.meshgrid()), dtype=float) * np.ones(grid.shape))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(value)))

    def interp(self, point) -> float:
        """Periodic multilinear interpolation at an off-node point."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        idx_lo, frac = [], []
        for a, n in enumerate(self.grid.shape):
            t = (pt[a] % 1.0) * n
            i0 = int(np.floor(t))
            idx_lo.append(i0 % n)
            frac.append(t - i0)
        v = self.values
        if self.grid.dim == 1:
            i0 = idx_lo[0]
            i1 = (i0 + 1) % self.grid.shape[0]
            return float((1 - frac[0]) * v[i0] + frac[0] * v[i1])
        i0, j0 = idx_lo
        i1 = (i0 + 1) % self.grid.shape[0]
        j1 = (j0 + 1) % self.grid.shape[1]
        fx, fy = frac
        return float(
            (1 - fx) * (1 - fy) * v[i0, j0]
            + fx * (1 - fy) * v[i1, j0]
            + (1 - fx) * fy * v[i0, j1]
            + fx * fy * v[i1, j1]
        )

    def to_csv(self) -> str:
        """CSV serialization: header ``x[,y],value``, lexicographic node order,
        17 significant digits."""
        buf = io.StringIO()
        axes = self.grid.axes()
        if self.grid.dim == 1:
            buf.write("x,value\n")
            for i, x in enumerate(axes[0]):
                buf.write(f"{x:.17g},{self.values[i]:.17g}\n")
        else:
            buf.write("x,y,value\n")
            for i, x in enumerate(axes[0]):
                for j, y in enumerate(axes[1]):
                    buf.write(f"{x:.17g},{y:.17g},{self.values[i, j]:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        header = lines[0].strip().split(",")
        rows = [tuple(float(tok) for tok in ln.split(",")) for ln in lines[1:]]
        if header == ["x", "value"]:
            n = len(rows)
            vals = np.array([r[1] for r in rows])
            return cls(TorusGrid((n,)), vals)
        if header == ["x", "y", "value"]:
            xs = sorted({r[0] for r in rows})
            ys = sorted({r[1] for r in rows})
            grid = TorusGrid((len(xs), len(ys)))
            vals = np.array([r[2] for r in rows]).reshape(len(xs), len(ys))
            return cls(grid, vals)
        raise GridError(f"unrecognized field CSV header: {header}")


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform truncation of velocity space: m odd nodes on [-v_max, v_max].

    m odd guarantees 0 is a node; the truncation radius must enclose the
    velocity bound reported by the Hamiltonian model, since transported mass
    outside it is lost to clipping.
    """

    v_max: float
    m_points: int

    def __post_init__(self):
        if self.v_max <= 0:
            raise GridError("v_max must be positive")
        if self.m_points < 3 or self.m_points % 2 == 0:
            raise GridError("m_points must be an odd integer >= 3")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.m_points)

    @property
    def dv(self) -> float:
        return 2.0 * self.v_max / (self.m_points - 1)


def _spacing(f: GridFunction, axis: int) -> float:
    return f.grid.spacing[axis]


def diff(f: GridFunction, axis: int = 0, mode: str = "central") -> GridFunction:
    """Periodic finite difference along ``axis``.

    ``forward``  -> (f_{k+1} - f_k)/h,
    ``backward`` -> (f_k - f_{k-1})/h,
    ``central``  -> their average.
    """
    v = f.values
    h = _spacing(f, axis)
    if mode == "forward":
        out = (np.roll(v, -1, axis=axis) - v) / h
    elif mode == "backward":
        out = (v - np.roll(v, 1, axis=axis)) / h
    elif mode == "central":
        out = (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * h)
    else:
        raise GridError(f"unknown difference mode {mode!r}")
    return GridFunction(f.grid, out)


def laplacian(f: GridFunction) -> GridFunction:
    """Standard periodic second difference, summed over axes."""
    v = f.values
    out = np.zeros_like(v)
    for axis, h in enumerate(f.grid.spacing):
        out += (np.roll(v, -1, axis=axis) - 2.0 * v + np.roll(v, 1, axis=axis)) / h**2
    return GridFunction(f.grid, out)


def integrate(f: GridFunction) -> float:
    """h^dim * sum of node values (trapezoid = midpoint on a periodic grid)."""
    cell = float(np.prod(f.grid.spacing))
    return cell * float(np.sum(f.values))
