"""Matplotlib rendering of solver outputs to files, next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import GridFunction
from .adjoint import DiscreteMeasure

DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return str(path)


def plot_field(f: GridFunction, path, title: str = "", label: str | None = None,
               overlay: dict[str, GridFunction] | None = None):
    """Line plot (1D) or image (2D) of a grid function."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if f.grid.dim == 1:
        xs = f.grid.axes()[0]
        ax.plot(xs, f.values, lw=1.5, label=label)
        if overlay:
            for name, g in overlay.items():
                ax.plot(xs, g.values, lw=1.0, ls="--", label=name)
        if label or overlay:
            ax.legend(fontsize=8)
        ax.set_xlabel("x")
    else:
        im = ax.imshow(f.values.T, origin="lower", extent=(0, 1, 0, 1),
                       aspect="equal", cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)


def plot_history(values, path, title: str = "", ylabel: str = "", logy: bool = False):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(values) + 1), values, marker="o", ms=3, lw=1.0)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)


def plot_measure(mu: DiscreteMeasure, path, title: str = ""):
    """Position-velocity heatmap (1D models) or position marginal (2D)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if mu.grid.dim == 1:
        xs = mu.grid.axes()[0]
        vs = mu.vgrid.nodes
        w = np.ma.masked_less_equal(mu.weights.T, 0.0)
        pc = ax.pcolormesh(xs, vs, w, cmap="magma", shading="nearest")
        fig.colorbar(pc, ax=ax, shrink=0.8, label="mass")
        ax.set_xlabel("x")
        ax.set_ylabel("v")
    else:
        im = ax.imshow(mu.position_marginal().T, origin="lower",
                       extent=(0, 1, 0, 1), cmap="magma")
        fig.colorbar(im, ax=ax, shrink=0.8, label="mass")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)


def plot_marginals(mu: DiscreteMeasure, path, title: str = ""):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    if mu.grid.dim == 1:
        axes[0].bar(mu.grid.axes()[0], mu.position_marginal(),
                    width=mu.grid.spacing[0], align="center")
        axes[0].set_xlabel("x")
    else:
        axes[0].imshow(mu.position_marginal().T, origin="lower", cmap="magma")
        axes[0].set_xlabel("x")
    axes[0].set_title("position marginal", fontsize=9)
    axes[1].bar(mu.vgrid.nodes, mu.velocity_marginal().reshape(-1)
                if mu.grid.dim == 1 else mu.velocity_marginal().sum(axis=1),
                width=mu.vgrid.dv, align="center")
    axes[1].set_xlabel("v")
    axes[1].set_title("velocity marginal", fontsize=9)
    if title:
        fig.suptitle(title, fontsize=10)
    return _save(fig, path)


def plot_trial_gaps(records, path, title: str = ""):
    """Per-trial comparison gaps against their budgets."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs, gaps, budgets = [], [], []
    for r in records:
        if r.get("kind") != "boundary":
            continue
        xs.append(r["trial"])
        gaps.append(r["max_gap_global"] - max(r["max_gap_on_M"], 0.0))
        budgets.append(r["budget"])
    ax.plot(xs, gaps, "o", ms=3, label="excess gap")
    ax.plot(xs, budgets, lw=1.0, label="budget")
    ax.set_xlabel("trial")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)
