"""Command-line entry point.

Exit codes: 0 when every check passes, 1 when a check fails (reports are
still written), 2 on configuration or solver errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .certify import certify_constraint, reverify
from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, MaxIterExceeded, ProxSweepError, SweepGateViolated
from .experiments import (
    StudyConfig,
    continuity_study,
    convergence_order_study,
    implicit_lipschitz_study,
    lipschitz_study,
)
from .library import make_constraint, make_state_map
from .sweep_explicit import (
    SweepProblem,
    annotate,
    rate_bound_margins,
    solve,
    step_scale,
    write_trajectory_csv,
)
from .sweep_implicit import ImplicitProblem, solve_picard

__all__ = ["main", "run", "build_parser", "atomic_write", "SCHEMA_VERSION"]

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CHECK, EXIT_ERROR = 0, 1, 2


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _report_text(command: str, seed: int, body: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "seed": seed, **body}
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _write_report(out: Path, name: str, command: str, seed: int, body: dict) -> None:
    atomic_write(out / name, _report_text(command, seed, body))


# -- subcommands -------------------------------------------------------------


def _constraint(cfg: RunConfig):
    return make_constraint(cfg.constraint.family, dict(cfg.constraint.params))


def _cmd_certify(cfg: RunConfig, out: Path, base: Path) -> int:
    cons = _constraint(cfg)
    opts = cfg.certify
    W = (np.asarray(opts.w_samples, float) if opts.w_samples is not None
         else np.zeros((1, cons.param_dim)))
    kappa = opts.coercivity_kappa
    if kappa is None and cons.constants is not None:
        kappa = cons.constants.coercivity_kappa
    rng = np.random.default_rng(cfg.seed)
    report = certify_constraint(cons, W, rng=rng, n_boundary=opts.n_boundary,
                                n_pairs=opts.n_pairs, n_param_pairs=opts.n_param_pairs,
                                coercivity_kappa=kappa, rho_list=opts.rho_list, tube=opts.tube)
    viol = reverify(cons, report.constants, W, rng=rng, n_boundary=opts.n_boundary,
                    n_pairs=opts.n_pairs, n_param_pairs=opts.n_param_pairs, tube=opts.tube)
    passed = report.passed and not any(viol.values())
    body = {"family": cons.name, "params": cons.params, "certification": report.to_dict(),
            "reverification_violations": viol, "passed": passed}
    _write_report(out, "certify_report.json", "certify", cfg.seed, body)
    return EXIT_OK if passed else EXIT_CHECK


def _cmd_solve(cfg: RunConfig, out: Path, base: Path) -> int:
    cons = _constraint(cfg)
    opts = cfg.solver
    u = cfg.load_path("u", base)
    w = cfg.load_path("w", base)
    prob = SweepProblem(cons, u, w, cfg.x0, activation_tol=opts.activation_tol,
                        gate_fraction=opts.gate_fraction, seed=cfg.seed % 2**32)
    traj = solve(prob, opts.scheme)
    annotate(traj, prob, n_z=opts.n_z)
    scale = step_scale(prob)
    rate = rate_bound_margins(traj, prob)
    checks = {
        "feasible": bool(np.all(traj.G <= 1.0 + cons.level_tol)),
        "rate_bound": bool(np.all(rate >= -opts.check_tol * scale)),
        "vi_residual": bool(np.all(traj.vi_residual >= -opts.check_tol * scale)),
    }
    body = {
        "scheme": opts.scheme,
        "grid": {"n_steps": prob.grid.n_steps, "T": prob.grid.T, "h": prob.grid.h},
        "constants": cons.constants.to_dict(),
        "gate_min_margin": traj.meta["gate_min_margin"],
        "hausdorff_constant": traj.meta["hausdorff_constant"],
        "rate_bound_worst": float(rate.min()) if rate.size else 0.0,
        "vi_residual_worst": traj.meta["vi_worst"],
        "max_G": traj.meta["max_G"],
        "max_G_pre": traj.meta["max_G_pre"],
        "checks": checks,
        "passed": all(checks.values()),
    }
    atomic_write(out / "trajectory.csv", write_trajectory_csv(traj))
    _write_report(out, "solve_report.json", "solve", cfg.seed, body)
    return EXIT_OK if body["passed"] else EXIT_CHECK


def _state_map(cfg: RunConfig, cons, base: Path):
    spec = cfg.implicit.state_map
    params = {"n": cons.state_dim, "m": cons.param_dim}
    if spec.w_base is not None:
        params["w_base"] = spec.w_base.load(base)
    if spec.kind == "linear":
        if spec.Gamma is not None:
            params["Gamma"] = spec.Gamma
        if spec.Omega is not None:
            params["Omega"] = spec.Omega
    else:
        params["alpha"] = spec.alpha
    return make_state_map(spec.kind, params, cons)


def _cmd_solve_implicit(cfg: RunConfig, out: Path, base: Path) -> int:
    cons = _constraint(cfg)
    u = cfg.load_path("u", base)
    gmap = _state_map(cfg, cons, base)
    imp = cfg.implicit
    prob = ImplicitProblem(cons, u, cfg.x0, gmap, epsilon=imp.epsilon,
                           scheme=cfg.solver.scheme, seed=cfg.seed % 2**32)
    try:
        traj, rep = solve_picard(prob, tol=imp.tol, max_iter=imp.max_iter)
    except MaxIterExceeded as exc:
        body = {"error": str(exc), "iteration_report": exc.report.to_dict() if exc.report else None,
                "passed": False}
        _write_report(out, "iteration_report.json", "solve-implicit", cfg.seed, body)
        raise
    checks = {
        "converged": rep.converged,
        "fixed_point": rep.fixed_point_residual is not None
        and rep.fixed_point_residual <= 2 * imp.tol,
        "within_budget": rep.budget is None or rep.iterations <= rep.budget,
        "no_flags": not rep.flagged,
    }
    body = {"iteration_report": rep.to_dict(), "scheme": cfg.solver.scheme,
            "grid": {"n_steps": u.n_steps, "T": u.T}, "checks": checks,
            "passed": all(checks.values())}
    atomic_write(out / "trajectory.csv", write_trajectory_csv(traj))
    _write_report(out, "iteration_report.json", "solve-implicit", cfg.seed, body)
    return EXIT_OK if body["passed"] else EXIT_CHECK


def _cmd_study(cfg: RunConfig, out: Path, base: Path, kind: str) -> int:
    so = cfg.study
    seed = cfg.seed % 2**32
    if kind == "order":
        grids = so.grids or ([100, 200, 400] if so.benchmark != "star" else [250, 500, 1000])
        res = convergence_order_study(so.benchmark, grids, scheme=cfg.solver.scheme)
    else:
        defaults = {"continuity": (1e-1, 1e-2, 1e-3, 1e-4),
                    "lipschitz": (1e-2, 5e-3, 2.5e-3, 1.25e-3),
                    "implicit": (1e-2, 5e-3, 2.5e-3)}
        sc = StudyConfig(kind, so.benchmark, tuple(so.scales or defaults[kind]), n=so.n,
                         scheme=cfg.solver.scheme, seed=seed, w_amplitude=so.w_amplitude)
        if kind == "continuity":
            res = continuity_study(sc)
        elif kind == "lipschitz":
            res = lipschitz_study(sc)
        else:
            res = implicit_lipschitz_study(sc)
    atomic_write(out / f"study_{kind}.csv", res.to_csv())
    _write_report(out, f"study_{kind}.json", "study", cfg.seed,
                  {"kind": kind, "benchmark": res.benchmark, "summary": res.summary,
                   "passed": res.passed})
    return EXIT_OK if res.passed else EXIT_CHECK


# -- driver ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxsweep", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON configuration file")
        sp.add_argument("--out", help="output directory (default: config output_dir or .)")
        sp.add_argument("--seed", type=int, help="seed (unsigned 64-bit)")
        sp.add_argument("--grid-n", type=int, help="resample inputs on a uniform grid of N steps")
        sp.add_argument("--scheme", choices=("catchup", "boundary-ode"))

    common(sub.add_parser("certify", help="estimate and re-verify family constants"))
    common(sub.add_parser("solve", help="solve the explicit problem"))
    common(sub.add_parser("solve-implicit", help="solve the state-dependent problem"))
    st = sub.add_parser("study", help="run a stability or convergence study")
    common(st, config_required=False)
    st.add_argument("--kind", required=True, choices=("continuity", "lipschitz", "implicit", "order"))
    st.add_argument("--benchmark", choices=("play", "ball", "star"))
    return p


def run(args: argparse.Namespace) -> int:
    """Dispatch parsed arguments; returns the exit code."""
    if args.config:
        cfg = load_config(args.config, args.command)
        base = Path(args.config).parent
    else:
        cfg = parse_config("{}", args.command)
        base = Path(".")
    updates = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer",
                              problems=["seed: out of range"])
        updates["seed"] = args.seed
    solver = cfg.solver.model_copy(update={k: v for k, v in (
        ("grid_n", args.grid_n), ("scheme", args.scheme)) if v is not None})
    if args.grid_n is not None and args.grid_n <= 0:
        raise ConfigError("--grid-n must be positive", problems=["grid_n: not positive"])
    updates["solver"] = solver
    if getattr(args, "benchmark", None):
        updates["study"] = cfg.study.model_copy(update={"benchmark": args.benchmark})
    cfg = cfg.model_copy(update=updates)
    out = Path(args.out or cfg.output_dir or ".")
    if args.command == "certify":
        return _cmd_certify(cfg, out, base)
    if args.command == "solve":
        return _cmd_solve(cfg, out, base)
    if args.command == "solve-implicit":
        return _cmd_solve_implicit(cfg, out, base)
    return _cmd_study(cfg, out, base, args.kind)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SweepGateViolated as exc:
        print(f"solver error: {exc} (refine factor {exc.refine_factor})", file=sys.stderr)
        return EXIT_ERROR
    except (ProxSweepError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
