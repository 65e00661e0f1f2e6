"""Command-line entry point.

Subcommands wire the solver modules together and write every artifact of a
run into one output directory: ``report.json`` (the same JSON printed to
stdout), CSV files for fields and measures, rendered figures, and
``manifest.json`` recording the resolved configuration, model hash, seed,
version and timings.  The run id is a hash of the resolved configuration, so
re-running the same command reproduces the same directory with byte-identical
report and CSV files (timings live only in the manifest).

Exit codes: 0 success, 2 not-converged / inapplicable result, 1 usage or
model errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SOFT = 2  # not converged / inapplicable


def _setup_threads():
    """Cap internal parallelism; default 1 for reproducibility."""
    n = os.environ.get("WEAKKAM_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


@dataclass
class RunManifest:
    run_id: str
    subcommand: str
    config: dict
    model_hash: str
    seed: int | None
    version: str
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id, "subcommand": self.subcommand,
            "config": self.config, "model_hash": self.model_hash,
            "seed": self.seed, "version": self.version,
            "timings": self.timings, "outputs": self.outputs,
        }


def _hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_id(subcommand: str, config: dict, model_hash: str) -> str:
    payload = json.dumps([subcommand, config, model_hash], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


class _Run:
    """Output-directory bookkeeping for one subcommand invocation."""

    def __init__(self, subcommand: str, args, config: dict, model_hash: str):
        self.t0 = time.perf_counter()
        self.subcommand = subcommand
        self.figures = not args.no_figures
        run_id = _run_id(subcommand, config, model_hash)
        out = Path(args.out) if args.out else Path("out") / run_id
        out.mkdir(parents=True, exist_ok=True)
        self.dir = out
        self.manifest = RunManifest(
            run_id=run_id, subcommand=subcommand, config=config,
            model_hash=model_hash, seed=getattr(args, "seed", None),
            version=__version__,
        )
        self.phase_t = self.t0

    def phase(self, name: str):
        now = time.perf_counter()
        self.manifest.timings[name] = now - self.phase_t
        self.phase_t = now

    def write_text(self, name: str, text: str):
        path = self.dir / name
        path.write_text(text)
        self.manifest.outputs.append(name)
        return path

    def finish(self, report: dict) -> dict:
        report = dict(report)
        report["run_id"] = self.manifest.run_id
        self.write_text("report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        self.manifest.timings["total"] = time.perf_counter() - self.t0
        (self.dir / "manifest.json").write_text(
            json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(json.dumps(report, indent=2, sort_keys=True))
        return report


def _positions(grid, nodes):
    axes = grid.axes()
    out = []
    for n in nodes:
        idx = tuple(n) if isinstance(n, (tuple, list)) else (int(n),)
        out.append([float(axes[a][i]) for a, i in enumerate(idx)])
    return out


def _builtin_u0(name: str, grid):
    import numpy as np
    from .grid import GridFunction

    mesh = grid.meshgrid()
    table = {
        "zero": lambda: np.zeros(grid.shape),
        "sin": lambda: np.sin(2 * np.pi * mesh[0]) * np.ones(grid.shape),
        "cos": lambda: np.cos(2 * np.pi * mesh[0]) * np.ones(grid.shape),
        "wave": lambda: (0.3 * np.sin(2 * np.pi * mesh[0])
                         + 0.2 * np.cos(4 * np.pi * mesh[0])) * np.ones(grid.shape),
    }
    if name not in table:
        raise ValueError(f"unknown builtin initial data {name!r}; "
                         f"choose from {sorted(table)}")
    return GridFunction(grid, table[name]())


def _load_u0(spec: str, grid):
    from .grid import GridFunction

    if spec.startswith("builtin:"):
        return _builtin_u0(spec.split(":", 1)[1], grid)
    f = GridFunction.from_csv(Path(spec).read_text())
    if f.grid.shape != grid.shape:
        raise ValueError(
            f"initial data grid {f.grid.shape} does not match --N grid {grid.shape}"
        )
    return f


def _grid(args):
    from .grid import TorusGrid

    if args.dim == 2:
        return TorusGrid((args.N, args.N))
    return TorusGrid((args.N,))


def _config(model, grid, args, epsilon=0.0):
    from .hj_solver import SchemeConfig

    dt = args.dt if args.dt == "auto" else float(args.dt)
    theta = args.theta if args.theta == "auto" else float(args.theta)
    kappa = epsilon**4 if epsilon > 0 else 0.0
    return SchemeConfig(
        model, grid, T=args.T, dt=dt, theta=theta, epsilon=epsilon,
        viscous=args.viscous, artificial_viscosity=kappa,
        dissipation=args.dissipation,
    )


def _config_dict(args, **extra) -> dict:
    keep = ("model", "N", "dim", "T", "dt", "theta", "viscous", "eps", "x0", "m",
            "union", "u0", "y", "mather", "trials", "seed", "dissipation")
    out = {k: getattr(args, k) for k in keep if hasattr(args, k)}
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_audit_model(args) -> int:
    from .hamiltonian import load_model, audit_model
    from .grid import TorusGrid, GridFunction
    from . import plots

    model = load_model(args.model)
    run = _Run("audit-model", args, _config_dict(args), _hash_file(args.model))
    audit = audit_model(model)
    run.phase("audit")
    report = audit.to_dict()
    report["dim"] = model.dim
    report["shift"] = model.shift
    if run.figures and model.dim == 1:
        grid = TorusGrid((256,))
        v = GridFunction.from_callable(grid, model.V)
        overlay = {}
        if model.diffusion is not None:
            overlay["a(x)"] = GridFunction.from_callable(grid, model.diffusion)
        run.manifest.outputs.append(
            Path(plots.plot_field(v, run.dir / "potential.png", "model data",
                                  label="V(x)", overlay=overlay)).name
        )
    run.finish(report)
    return EXIT_OK


def _cmd_solve_ergodic(args) -> int:
    from .hamiltonian import load_model
    from .grid import GridFunction
    from .hj_solver import ergodic_solve
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("solve-ergodic", args, _config_dict(args), _hash_file(args.model))
    config = _config(model, grid, args, epsilon=args.eps)
    sol = ergodic_solve(model, config, _builtin_u0("zero", grid))
    run.phase("solve")
    run.write_text("w.csv", sol.w.to_csv())
    report = {
        "c": sol.c_estimate, "residual": sol.residual, "history": sol.history,
        "converged": sol.converged, "final_rate": sol.final_rate,
        "t_reached": sol.t_reached,
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_field(
            sol.w, run.dir / "w.png", f"stationary solution (c={sol.c_estimate:.4f})"
        )).name)
        run.manifest.outputs.append(Path(plots.plot_history(
            sol.history, run.dir / "c_history.png", "ergodic constant estimate",
            ylabel="c(t)"
        )).name)
    run.finish(report)
    return EXIT_OK if sol.converged else EXIT_SOFT


def _cmd_solve_cauchy(args) -> int:
    from .hamiltonian import load_model
    from .hj_solver import solve_cauchy
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("solve-cauchy", args, _config_dict(args), _hash_file(args.model))
    config = _config(model, grid, args, epsilon=args.eps)
    u0 = _load_u0(args.u0, grid)
    res = solve_cauchy(model, config, u0, record_checkpoints=True)
    run.phase("solve")
    run.write_text("final.csv", res.final.to_csv())
    report = {"T": config.T, "sup_norm_rate": res.sup_norm_rate}
    if run.figures:
        overlay = {"u0": u0}
        run.manifest.outputs.append(Path(plots.plot_field(
            res.final, run.dir / "final.png", f"u(., T={config.T:g})",
            label="u(., T)", overlay=overlay
        )).name)
        run.manifest.outputs.append(Path(plots.plot_history(
            res.sup_norm_rate, run.dir / "rate.png", "unit-time sup-norm rate",
            ylabel="rate", logy=True
        )).name)
    run.finish(report)
    return EXIT_OK


def _cmd_mather_lp(args) -> int:
    from .hamiltonian import load_model
    from .grid import VelocityGrid
    from .hamiltonian import lipschitz_bound
    from .mather_lp import build_lp, solve_lp, mather_set_union
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("mather-lp", args, _config_dict(args), _hash_file(args.model))
    vgrid = VelocityGrid(1.25 * lipschitz_bound(model), args.m)
    lp = build_lp(model, grid, vgrid, viscous=args.viscous)
    run.phase("build")
    if args.union:
        nodes, res = mather_set_union(model, grid, vgrid, viscous=args.viscous, lp=lp)
    else:
        res = solve_lp(lp)
        nodes = res.projected_set
    run.phase("solve")
    run.write_text("measure.csv", res.measure.to_csv())
    report = {
        "optimal_value": res.optimal_value,
        "solver_status": res.solver_status,
        "primal_residual": res.primal_residual,
        "duality_gap": res.duality_gap,
        "projected_set": _positions(grid, nodes),
        "n_variables": lp.n_variables,
        "n_rows": lp.n_rows,
        "viscous": args.viscous,
        "union": args.union,
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_measure(
            res.measure, run.dir / "measure.png",
            f"minimizing measure (value {res.optimal_value:.3e})"
        )).name)
        run.manifest.outputs.append(Path(plots.plot_marginals(
            res.measure, run.dir / "marginals.png"
        )).name)
    run.finish(report)
    return EXIT_OK if res.solver_status == "optimal" else EXIT_SOFT


def _cmd_adjoint_measure(args) -> int:
    from .hamiltonian import load_model, lipschitz_bound
    from .grid import VelocityGrid
    from .hj_solver import ergodic_solve, solve_regularized
    from .adjoint import solve_adjoint, build_measure, holonomy_residual
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("adjoint-measure", args, _config_dict(args), _hash_file(args.model))
    base_cfg = _config(model, grid, args, epsilon=0.0)
    sol = ergodic_solve(model, base_cfg, _builtin_u0("zero", grid))
    run.phase("stationary-solve")
    eps = args.eps
    reg_cfg = base_cfg.replace(T=1.0, epsilon=eps, artificial_viscosity=eps**4)
    reg = solve_regularized(model, reg_cfg, sol.w)
    run.phase("regularized-solve")
    sigma = solve_adjoint(model, reg, x0=args.x0)
    run.phase("adjoint-solve")
    vgrid = VelocityGrid(1.25 * lipschitz_bound(model), args.m)
    mu = build_measure(model, reg, sigma, vgrid)
    holo = holonomy_residual(model, mu, "fourier", viscous=args.viscous)
    run.phase("measure")
    run.write_text("measure.csv", mu.to_csv())
    report = {
        "mass_defect": mu.mass_defect,
        "holonomy_residual": holo,
        "action": mu.action(model),
        "velocity_overflow": mu.velocity_overflow,
        "epsilon": eps,
        "x0": args.x0,
        "regularization_deviation": reg.deviation_max,
        "observed_constant": reg.observed_constant,
        "stationary_converged": sol.converged,
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_measure(
            mu, run.dir / "measure.png", f"adjoint measure, eps={eps:g}"
        )).name)
        run.manifest.outputs.append(Path(plots.plot_field(
            sigma.sigma(0), run.dir / "sigma0.png", "adjoint density at t=0"
        )).name)
    run.finish(report)
    return EXIT_OK if sol.converged else EXIT_SOFT


def _cmd_distance(args) -> int:
    from .hamiltonian import load_model
    from .metric import distance_field
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("distance", args, _config_dict(args), _hash_file(args.model))
    y = tuple(float(t) for t in args.y.split(","))
    if len(y) != model.dim:
        raise ValueError(f"--y has {len(y)} coordinates but the model is {model.dim}D")
    pot = distance_field(model, y, grid)
    run.phase("distance")
    run.write_text("distance.csv", pot.field.to_csv())
    report = {
        "y": list(pot.y), "method": pot.method, "residual": pot.residual,
        "max_distance": float(pot.values.max()),
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_field(
            pot.field, run.dir / "distance.png", f"d(., y={args.y})"
        )).name)
    run.finish(report)
    return EXIT_OK


def _parse_mather(spec: str, grid, model, viscous: bool):
    from .mather_lp import mather_set_union

    if spec == "auto":
        nodes, _ = mather_set_union(model, grid, viscous=viscous)
        return nodes
    nodes = []
    for tok in spec.split(","):
        nodes.append(grid.nearest_node(tuple(float(t) for t in tok.split(":"))
                                       if ":" in tok else float(tok)))
    return nodes


def _cmd_profile(args) -> int:
    from .hamiltonian import load_model
    from .metric import distance_bank
    from .profile import compare_profiles
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("profile", args, _config_dict(args), _hash_file(args.model))
    u0 = _load_u0(args.u0, grid)
    nodes = _parse_mather(args.mather, grid, model, args.viscous)
    run.phase("mather-set")
    bank = distance_bank(model, grid)
    run.phase("distance-bank")
    config = _config(model, grid, args)
    rep = compare_profiles(model, config, u0, nodes, bank)
    run.phase("profiles")
    run.write_text("direct.csv", rep.direct.to_csv())
    run.write_text("formula.csv", rep.formula.to_csv())
    report = {
        "sup_gap": rep.sup_gap,
        "mather_trace": rep.mather_trace,
        "mather_nodes": _positions(grid, nodes),
        "converged": rep.converged,
        "final_rate": rep.final_rate,
        "t_reached": rep.t_reached,
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_field(
            rep.direct, run.dir / "profiles.png",
            f"asymptotic profile (gap {rep.sup_gap:.3e})", label="direct",
            overlay={"formula": rep.formula}
        )).name)
    run.finish(report)
    return EXIT_OK if rep.converged else EXIT_SOFT


def _cmd_verify_uniqueness(args) -> int:
    import numpy as np
    from .hamiltonian import load_model
    from .grid import GridFunction
    from .hj_solver import ergodic_solve
    from .metric import distance_bank
    from .mather_lp import build_lp, solve_lp, mather_set_union
    from .uniqueness import randomized_theorem_test, check_comparison
    from . import plots

    model = load_model(args.model)
    grid = _grid(args)
    run = _Run("verify-uniqueness", args, _config_dict(args), _hash_file(args.model))

    nodes, base = mather_set_union(model, grid, viscous=args.viscous)
    run.phase("mather-set")

    if args.viscous:
        config = _config(model, grid, args)
        w1 = ergodic_solve(model, config, _builtin_u0("zero", grid)).w
        w2 = ergodic_solve(model, config, _builtin_u0("wave", grid)).w
        # gauge both at the first Mather node so the hypothesis holds there
        f0 = nodes[0][0] * (grid.shape[1] if grid.dim == 2 else 1) + (
            nodes[0][1] if grid.dim == 2 else 0
        )
        w1 = GridFunction(grid, w1.values - w1.values.reshape(-1)[f0])
        w2 = GridFunction(grid, w2.values - w2.values.reshape(-1)[f0])
        rep = check_comparison(model, w1, w2, nodes, [base.measure], viscous=True)
        run.phase("comparison")
        report = {
            "viscous": True,
            "verdict": rep.verdict,
            "max_gap_on_M": rep.max_gap_on_M,
            "max_gap_global": rep.max_gap_global,
            "tolerance_budget": rep.tolerance_budget,
            "budget_items": rep.budget_items,
            "measure_functionals": rep.measure_functionals,
            "mather_nodes": _positions(grid, nodes),
        }
        run.finish(report)
        return EXIT_OK if rep.verdict == "pass" else (
            EXIT_SOFT if rep.verdict == "inapplicable" else EXIT_ERROR
        )

    bank = distance_bank(model, grid)
    run.phase("distance-bank")
    agg = randomized_theorem_test(
        model, seed=args.seed, trials=args.trials, grid=grid, bank=bank,
        mather_nodes=nodes, measures=[base.measure],
    )
    run.phase("trials")
    lines = ["trial,kind,verdict,max_gap_global,max_gap_on_M,budget"]
    for r in agg["records"]:
        lines.append(
            f"{r['trial']},{r['kind']},{r.get('verdict', '')},"
            f"{r.get('max_gap_global', '')},{r.get('max_gap_on_M', '')},"
            f"{r.get('budget', '')}"
        )
    run.write_text("trials.csv", "\n".join(lines) + "\n")
    report = {
        "viscous": False,
        "trials": agg["trials"],
        "passes": agg["passes"],
        "pass_rate": agg["pass_rate"],
        "equal_on_M_ok": agg["equal_on_M_ok"],
        "profile_ordering_ok": agg["profile_ordering_ok"],
        "mather_nodes": _positions(grid, nodes),
    }
    if run.figures:
        run.manifest.outputs.append(Path(plots.plot_trial_gaps(
            agg["records"], run.dir / "trials.png", "comparison trials"
        )).name)
    run.finish(report)
    ok = agg["passes"] == agg["trials"] and agg["equal_on_M_ok"] and agg["profile_ordering_ok"]
    return EXIT_OK if ok else EXIT_ERROR


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakkam",
        description="Numerical weak-KAM toolkit on the torus: ergodic constants, "
                    "Mather measures, critical distances, large-time profiles.",
    )
    parser.add_argument("--version", action="version", version=f"weakkam {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("--model", required=True, help="model description JSON")
        p.add_argument("--N", type=int, default=200, help="grid nodes per axis")
        p.add_argument("--dim", type=int, default=1, choices=(1, 2))
        p.add_argument("--out", default=None, help="output directory (default out/<run-id>)")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("--seed", type=int, default=0)

    def scheme(p):
        p.add_argument("--T", type=float, default=50.0, help="time horizon")
        p.add_argument("--dt", default="auto", help="time step or 'auto'")
        p.add_argument("--theta", default="auto", help="dissipation constant or 'auto'")
        p.add_argument("--viscous", action="store_true",
                       help="include the model's degenerate diffusion")
        p.add_argument("--dissipation", choices=("local", "global"), default="local")

    p = sub.add_parser("audit-model", help="growth/coercivity audit of a model file")
    common(p)
    p.set_defaults(fn=_cmd_audit_model)

    p = sub.add_parser("solve-ergodic", help="ergodic constant and stationary solution")
    common(p)
    scheme(p)
    p.add_argument("--eps", type=float, default=0.0, help="time-scaling epsilon")
    p.set_defaults(fn=_cmd_solve_ergodic)

    p = sub.add_parser("solve-cauchy", help="evolve initial data to a horizon")
    common(p)
    scheme(p)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--u0", default="builtin:zero", help="builtin:<name> or CSV path")
    p.set_defaults(fn=_cmd_solve_cauchy)

    p = sub.add_parser("mather-lp", help="minimizing measures via linear programming")
    common(p)
    p.add_argument("--m", type=int, default=41, help="velocity nodes (odd)")
    p.add_argument("--viscous", action="store_true")
    p.add_argument("--union", action="store_true",
                   help="approximate the union over all minimizing measures")
    p.set_defaults(fn=_cmd_mather_lp)

    p = sub.add_parser("adjoint-measure", help="approximate Mather measure via the adjoint route")
    common(p)
    scheme(p)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--x0", type=float, default=0.33, help="terminal Dirac location")
    p.add_argument("--m", type=int, default=41)
    p.set_defaults(fn=_cmd_adjoint_measure)

    p = sub.add_parser("distance", help="critical distance field d(., y)")
    common(p)
    p.add_argument("--y", default="0.0", help="base point, comma-separated in 2D")
    p.set_defaults(fn=_cmd_distance)

    p = sub.add_parser("profile", help="large-time profile: direct vs representation")
    common(p)
    scheme(p)
    p.add_argument("--u0", default="builtin:zero")
    p.add_argument("--mather", default="auto",
                   help="'auto' (LP union) or comma-separated base positions")
    p.set_defaults(fn=_cmd_profile)

    p = sub.add_parser("verify-uniqueness", help="randomized comparison-theorem suite")
    common(p)
    scheme(p)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(fn=_cmd_verify_uniqueness)

    return parser


def run(argv) -> int:
    """Execute one subcommand; returns the process exit code."""
    _setup_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    from .hamiltonian import ModelError
    from .hj_solver import CFLError, DivergenceError

    try:
        return args.fn(args)
    except (ModelError, CFLError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOFT


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
