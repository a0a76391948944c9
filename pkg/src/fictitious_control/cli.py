"""Command-line entry point.

Usage::

    fictitious-control SUBCOMMAND CONFIG.toml [--out DIR] [--seed N] [-v]

Exit status: 0 success, 1 configuration error, 2 controllability condition
not satisfied, 3 solver failure.  ``FICTITIOUS_CONTROL_THREADS`` limits the
number of BLAS/LAPACK threads.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import sympy as sp

from . import __version__
from .algebraic import (build_Mstar_case_i, build_Mstar_case_ii, op_M_thm1, op_N, poincare_rayleigh,
                        poincare_weighted_oracle, verify_LM_identity, write_det_H_csv)
from .config import ConfigError, RunConfig, load_config
from .discretize import Grid, SolverError, write_trajectory_binary, write_trajectory_csv
from .expressions import T_SYM, X_SYM
from .hum import HumError, control_regularity_report, cost_identity_check, hum_solve, penalty_sweep
from .model import CoefficientError, check_condition_case_i, find_i0_for, min_abs_det_H, validate_spec
from .operators import SingularNodeError
from .pipeline import (ApproximationError, ConditionError, PipelineError, approximate_control, make_hum_config,
                       make_profile, run_pipeline)
from .weights import write_weights_csv

log = logging.getLogger("fictitious_control")

EXIT_OK, EXIT_CONFIG, EXIT_CONDITION, EXIT_SOLVER = 0, 1, 2, 3
THREADS_ENV = "FICTITIOUS_CONTROL_THREADS"


# ------------------------------------------------------------------ helpers
def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    return str(obj)


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_mode(cfg: RunConfig) -> str:
    """Configured mode, or the first applicable one among Theorem 1, case (i), case (ii)."""
    if cfg.mode != "auto":
        return cfg.mode
    c = cfg.spec.coefficients
    if c.is_constant and find_i0_for(c) is not None:
        return "theorem1"
    if cfg.spec.m == 2:
        window = ((0.0, cfg.spec.T), cfg.spec.omega)
        if check_condition_case_i(cfg.spec, window, cfg.check["samples"]):
            return "case_i"
        return "case_ii"
    raise ConditionError("no applicable controllability condition (Theorem 1 needs constant coefficients)")


def _grid(cfg: RunConfig) -> Grid:
    return Grid.for_spec(cfg.spec, cfg.nx, cfg.nt)


def _hum_config(cfg: RunConfig, grid: Grid, mode: str, k=None):
    h, w = cfg.hum, cfg.weights
    return make_hum_config(cfg.spec, grid, mode, k=k or h["k"], c_cal=w["c_cal"], lam=w["lambda"], s0=w["s0"],
                           cutoff_kind=w["cutoff"], i0=h["i0"], cg_tol=h["cg_tol"],
                           cg_max_iter=h["cg_max_iter"], K=h["K"])


def _write_traj(out: Path, name: str, traj, formats) -> None:
    if "csv" in formats:
        write_trajectory_csv(traj, out / f"{name}.csv")
    if "binary" in formats:
        write_trajectory_binary(traj, out / f"{name}.bin")


# -------------------------------------------------------------- subcommands
def cmd_check(cfg: RunConfig, out: Path, args) -> int:
    spec = cfg.spec
    issues = validate_spec(spec)
    report = {"name": spec.name, "m": spec.m, "issues": issues}
    if issues:
        raise ConfigError("; ".join(issues))
    window = (cfg.check["t_window"] or (0.0, spec.T), spec.omega)
    status = EXIT_CONDITION
    lines = []
    c = spec.coefficients
    if c.is_constant:
        i0 = find_i0_for(c)
        report["theorem1"] = {"applies": i0 is not None, "i0": i0}
        if i0 is not None:
            lines.append(f"Theorem 1 applies, i0={i0}")
            status = EXIT_OK
        else:
            lines.append("not controllable by Theorem 1 (necessity)")
    if spec.m == 2:
        samples = cfg.check["samples"]
        case_i = check_condition_case_i(spec, window, samples)
        mn, where = min_abs_det_H(spec, window, samples)
        report["case_i"] = {"holds": case_i}
        report["case_ii"] = {"min_abs_det_H": mn, "argmin": where, "C_bound": cfg.check["C_bound"],
                             "holds": bool(mn > cfg.check["C_bound"])}
        if case_i:
            lines.append("Theorem 2 case (i) applies")
            status = EXIT_OK
        if mn > cfg.check["C_bound"]:
            lines.append(f"Theorem 2 case (ii) applies: min |det H| = {_fmt(mn)} at (t, x) = "
                         f"({_fmt(where[0])}, {_fmt(where[1])})")
            status = EXIT_OK
        else:
            lines.append(f"Theorem 2 case (ii) fails: min |det H| = {_fmt(mn)} at (t, x) = "
                         f"({_fmt(where[0])}, {_fmt(where[1])})")
        if "csv" in cfg.formats:
            write_det_H_csv(spec, window, out / "det_H.csv", samples)
    for line in lines:
        print(line)
    report["status"] = status
    if "json" in cfg.formats:
        write_json(out / "check.json", report)
    return status


def cmd_hum(cfg: RunConfig, out: Path, args) -> int:
    mode = resolve_mode(cfg)
    grid = _grid(cfg)
    config = _hum_config(cfg, grid, mode)
    y0 = cfg.initial_state(grid)
    sol = hum_solve(cfg.spec, grid, config, y0, cfg.target_state(grid))
    summary = {"mode": mode, "k": sol.k, "terminal_norm": sol.terminal_norm, "terminal_error": sol.terminal_error,
               "cost": sol.cost, "cg_iterations": sol.cg_iterations, "cg_residual": sol.cg_residual,
               "regularity": control_regularity_report(sol, config.profile, config.K)}
    if sol.target is None:
        summary["cost_identity"] = cost_identity_check(sol, y0)
    print(f"k={_fmt(sol.k)} terminal_norm={_fmt(sol.terminal_norm)} J_k={_fmt(sol.cost)} "
          f"cg_iterations={sol.cg_iterations}")
    if "json" in cfg.formats:
        write_json(out / "hum.json", summary)
    _write_traj(out, "control", sol.v, cfg.formats)
    _write_traj(out, "state", sol.z, cfg.formats)
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig, out: Path, args) -> int:
    mode = resolve_mode(cfg)
    grid = _grid(cfg)
    config = _hum_config(cfg, grid, mode)
    y0 = cfg.initial_state(grid)
    target = cfg.target_state(grid)
    p = cfg.pipeline
    if target is not None and p["epsilon"] is not None:
        y, u, achieved = approximate_control(cfg.spec, grid, y0, target, p["epsilon"], config, mode,
                                             k_max=p["k_max"])
        summary = {"mode": mode, "achieved_error": achieved, "epsilon": p["epsilon"]}
        print(f"achieved_error={_fmt(achieved)} epsilon={_fmt(p['epsilon'])}")
    else:
        res = run_pipeline(cfg.spec, grid, mode, y0, config, target=target, C_bound=p["C_bound"],
                           strict=target is None)
        y, u = res.y, res.u
        summary = json.loads(res.report.to_json())
        print(f"terminal_norm={_fmt(res.report.terminal_norm)} pde_residual={_fmt(res.report.pde_residual)} "
              f"support_violation={_fmt(res.report.support_violation)}")
    if "json" in cfg.formats:
        write_json(out / "report.json", summary)
    _write_traj(out, "y", y, cfg.formats)
    _write_traj(out, "u", u, cfg.formats)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    mode = resolve_mode(cfg)
    grid = _grid(cfg)
    ks = [float(k) for k in cfg.hum["ks"]]
    config = _hum_config(cfg, grid, mode, k=ks[0])
    rows = penalty_sweep(cfg.spec, grid, config, cfg.initial_state(grid), ks)
    table = [(r["k"], r["terminal_norm"], r["J_k"], r["cg_iterations"]) for r in rows]
    for row in table:
        print(" ".join(_fmt(v) for v in row))
    if "csv" in cfg.formats:
        write_csv(out / "sweep.csv", ["k", "terminal_norm", "J_k", "cg_iterations"], table)
    if "json" in cfg.formats:
        write_json(out / "sweep.json", [{k: v for k, v in r.items() if k != "solution"} for r in rows])
    return EXIT_SOLVER if any("error" in r for r in rows) else EXIT_OK


def cmd_weights(cfg: RunConfig, out: Path, args) -> int:
    mode = resolve_mode(cfg)
    grid = _grid(cfg)
    w = cfg.weights
    profile = make_profile(cfg.spec, grid, mode, w["c_cal"], w["lambda"], w["s0"])
    summary = {"kappa": profile.kappa, "lambda": profile.lam, "s0": profile.s0, "p": profile.p,
               "rho_log_scale": profile.rho_log_scale, "alpha_min": float(profile.alpha.min()),
               "xi_min": float(profile.xi.min())}
    print(f"kappa={_fmt(profile.kappa)} s0={_fmt(profile.s0)} lambda={_fmt(profile.lam)} p={profile.p}")
    if "csv" in cfg.formats:
        write_weights_csv(profile, out / "weights.csv")
    if "json" in cfg.formats:
        write_json(out / "weights.json", summary)
    return EXIT_OK


def random_smooth_inputs(spec, count: int, rng: np.random.Generator):
    """Bump-localized trigonometric inputs in ``t`` and ``x`` with random coefficients."""
    lo, hi = spec.domain
    mid, width = 0.5 * (lo + hi), 0.1 * (hi - lo)
    bump = sp.exp(-((X_SYM - mid) ** 2) / (2 * width**2)) * T_SYM * (spec.T - T_SYM)
    samples = []
    for _ in range(count):
        row = []
        for _ in range(spec.m):
            c = rng.uniform(-1, 1, size=3).round(6)
            k = int(rng.integers(1, 4))
            row.append(bump * (float(c[0]) + float(c[1]) * sp.sin(k * sp.pi * X_SYM)
                               + float(c[2]) * sp.cos(k * X_SYM + T_SYM)))
        samples.append(row)
    return samples


def cmd_verify_identity(cfg: RunConfig, out: Path, args) -> int:
    mode = resolve_mode(cfg)
    spec = cfg.spec
    v = cfg.verify
    if v["zero_input"]:
        inputs = [[sp.Integer(0)] * spec.m]
    elif v["inputs"] is not None:
        inputs = v["inputs"]
    else:
        inputs = random_smooth_inputs(spec, 1, np.random.default_rng(args.seed))
    grids = [Grid(spec.domain[0], spec.domain[1], spec.T, n - 1, n) for n in v["levels"]]
    if mode == "theorem1":
        i0 = cfg.hum["i0"] or find_i0_for(spec.coefficients)
        if i0 is None:
            raise ConditionError("no index i0 couples the last equation to a controlled one")
        result = verify_LM_identity(op_M_thm1(i0, spec), op_N(i0, spec), spec, inputs, grids)
    else:
        Ms = build_Mstar_case_i(spec) if mode == "case_i" else build_Mstar_case_ii(spec)
        result = verify_LM_identity(Ms, None, spec, inputs, grids, adjoint_form=True)
    rows = list(zip(result["h"], result["residual"], result["relative"], result["max_abs"]))
    for row in rows:
        print(" ".join(_fmt(x) for x in row))
    exact = max(result["relative"]) < 1e-10
    print(f"order={_fmt(result['order'])}" + (" (residuals at round-off: identity exact on these grids)"
                                               if exact else ""))
    if "csv" in cfg.formats:
        write_csv(out / "identity.csv", ["h", "residual", "relative", "max_abs"], rows)
    if "json" in cfg.formats:
        write_json(out / "identity.json", {"mode": mode, "exact": exact, **result})
    return EXIT_OK


def cmd_poincare(cfg: RunConfig, out: Path, args) -> int:
    p = cfg.poincare
    value = poincare_rayleigh(p["g"], p["a"], p["nx"], cfg.spec.domain)
    summary = {"g": p["g"], "a": p["a"], "nx": p["nx"], "rayleigh_min": value, "constant": 1.0 / value}
    if p["g"] != 0:
        summary["weighted_oracle"] = poincare_weighted_oracle(p["g"], p["a"], p["nx"], cfg.spec.domain)
    print(f"rayleigh_min={_fmt(value)}")
    if "csv" in cfg.formats:
        write_csv(out / "poincare.csv", list(summary), [list(summary.values())])
    if "json" in cfg.formats:
        write_json(out / "poincare.json", summary)
    return EXIT_OK


HELP = {
    "check": "report which controllability condition holds (and min |det H|)",
    "hum": "penalized HUM control of the fully controlled system",
    "pipeline": "full fictitious-control pipeline with verification report",
    "sweep": "HUM penalty sweep over hum.ks",
    "weights": "sample the weight system",
    "verify-identity": "residual and convergence order of the algebraic identity",
    "poincare": "Rayleigh minimum of the first-order Poincare-type quotient",
}

COMMANDS = {
    "check": cmd_check,
    "hum": cmd_hum,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
    "weights": cmd_weights,
    "verify-identity": cmd_verify_identity,
    "poincare": cmd_poincare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fictitious-control",
                                     description="Null controls for coupled parabolic systems with m-1 controls.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("config", type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=0, help="seed for randomly sampled inputs")
        p.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    return parser


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise ConfigError(f"{args.out}: output directory is not writable")
        with _thread_limit():
            return COMMANDS[args.command](cfg, args.out, args)
    except ConditionError as exc:
        print(f"condition not satisfied: {exc}", file=sys.stderr)
        return EXIT_CONDITION
    except (HumError, SolverError, ApproximationError, PipelineError, SingularNodeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, CoefficientError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
