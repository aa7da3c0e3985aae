"""Command-line front end: problem configs in, trajectories, solutions,
certificates, plot data, and figures out.

Exit codes: 0 success (and check passed), 1 certificate check failed,
2 usage or configuration error, 3 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from .certificates import check_continuous, continuous_certificate
from .config import build_crowd, build_sweeping, load_config
from .crowd import solve_crowd
from .dynamics import PathOnGrid, catching_up, eta_endpoint, eta_from_trajectory
from .errors import (ConfigError, InfeasibleStart, NoFeasiblePattern,
                     NotInCone, NumericalFailure, SweepError)
from .optimizer import SolveOptions, solve_discrete
from .transcription import discretize


def _fmt(v):
    return f"{v:.17g}"


def write_trajectory_csv(path, traj_path, eta, eta_T):
    t, x, u, a = traj_path
    n, d = x.shape[1], a.shape[1]
    m = eta.shape[1] if eta.ndim == 2 else 0
    header = (["t"] + [f"x_{i + 1}" for i in range(n)]
              + [f"u_{i + 1}" for i in range(n)]
              + [f"a_{i + 1}" for i in range(d)]
              + [f"eta_{i + 1}" for i in range(m)])
    lines = [",".join(header)]
    k = len(t) - 1
    for j in range(k + 1):
        row = [t[j]] + list(x[j]) + list(u[j]) + list(a[j])
        if m:
            row += list(eta[j] if j < k else eta_T)
        lines.append(",".join(_fmt(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory_csv(path, n, d, m):
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except FileNotFoundError as exc:
        raise ConfigError(f"solution file not found: {path}") from exc
    if not lines:
        raise ConfigError("solution CSV is empty")
    header = [h.strip() for h in lines[0].split(",")]
    expected = (["t"] + [f"x_{i + 1}" for i in range(n)]
                + [f"u_{i + 1}" for i in range(n)]
                + [f"a_{i + 1}" for i in range(d)]
                + [f"eta_{i + 1}" for i in range(m)])
    if header != expected:
        raise ConfigError(
            f"solution CSV columns {header} do not match the config dimensions "
            f"(expected {expected})")
    rows = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split(",")]
        if len(vals) != len(expected):
            raise ConfigError("solution CSV row has the wrong number of fields")
    # re-parse once validated
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.shape[0] < 2:
        raise ConfigError("solution CSV needs at least two rows")
    t = data[:, 0]
    x = data[:, 1:1 + n]
    u = data[:, 1 + n:1 + 2 * n]
    a = data[:, 1 + 2 * n:1 + 2 * n + d]
    eta = data[:, 1 + 2 * n + d:]
    return PathOnGrid(t, x, u, a), eta


def write_plot_data(path, traj_path, eta=None):
    """Long-format CSV (series, t, value) for external plotting."""
    t, x, u, a = traj_path
    lines = ["series,t,value"]
    for name, arr in (("x", x), ("u", u), ("a", a)):
        for c in range(arr.shape[1]):
            for j in range(len(t)):
                lines.append(f"{name}_{c + 1},{_fmt(float(t[j]))},{_fmt(float(arr[j, c]))}")
    if eta is not None and eta.size:
        for c in range(eta.shape[1]):
            for j in range(eta.shape[0]):
                lines.append(f"eta_{c + 1},{_fmt(float(t[min(j, len(t) - 1)]))},{_fmt(float(eta[j, c]))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _ensure_dir(d):
    if d:
        os.makedirs(d, exist_ok=True)


def cmd_simulate(args):
    data = load_config(args.config)
    if data["kind"] != "sweeping":
        raise ConfigError("simulate expects a sweeping config")
    built = build_sweeping(data)
    if built["u_path"] is None or built["a_path"] is None:
        raise ConfigError("config key 'controls': simulate needs both u and a")
    problem = built["problem"]
    traj = catching_up(problem, built["u_path"], built["a_path"], args.grid)
    eta = eta_from_trajectory(traj, problem)
    eta_T = eta_endpoint(traj, problem)
    write_trajectory_csv(args.out, traj.as_path(), eta, eta_T)
    if args.emit_plot_data:
        write_plot_data(args.emit_plot_data, traj.as_path(), eta)
    if args.figures:
        from . import plots
        _ensure_dir(args.figures)
        plots.save_state_figure(os.path.join(args.figures, "trajectory.png"),
                                traj.as_path(), problem.C)
    return 0


def cmd_optimize(args):
    data = load_config(args.config)
    if data["kind"] != "sweeping":
        raise ConfigError("optimize expects a sweeping config")
    built = build_sweeping(data)
    problem = built["problem"]
    if args.tau is not None:
        from dataclasses import replace
        problem = replace(problem, tau=float(args.tau))
    u_fixed = None
    if built["fixed_u"]:
        if built["u_path"] is None:
            raise ConfigError("config key 'controls.u': required when fixed_u is set")
        nodes = np.linspace(0.0, problem.T, args.grid + 1)
        u_fixed = np.array([built["u_path"](t) for t in nodes])
    dp = discretize(problem, args.grid, u_fixed=u_fixed,
                    boundary_terminal=built["terminal_on_boundary"])
    opts = SolveOptions(multistart=args.multistart, seed=args.seed)
    sol = solve_discrete(dp, opts)
    traj = sol.trajectory
    eta = eta_from_trajectory(traj, problem)
    eta_T = eta_endpoint(traj, problem)
    write_trajectory_csv(args.out, traj.as_path(), eta, eta_T)
    summary = {"cost": sol.cost, "status": sol.status,
               "stationarity": sol.stationarity}
    report_path = args.report or (os.path.splitext(args.out)[0] + "_summary.json")
    with open(report_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if args.emit_plot_data:
        write_plot_data(args.emit_plot_data, traj.as_path(), eta)
    if args.figures:
        from . import plots
        _ensure_dir(args.figures)
        plots.save_state_figure(os.path.join(args.figures, "solution.png"),
                                traj.as_path(), problem.C)
    return 0 if sol.status == "converged" else 3


def cmd_check(args):
    data = load_config(args.config)
    if data["kind"] != "sweeping":
        raise ConfigError("check expects a sweeping config")
    built = build_sweeping(data)
    problem = built["problem"]
    path, _ = read_trajectory_csv(args.solution, problem.n, problem.d, problem.C.m)
    u_fixed = built["fixed_u"]
    cert = continuous_certificate(problem, path, u_fixed=u_fixed, tol=args.tol)
    report = check_continuous(problem, path, cert, tol=args.tol)
    report_path = args.report or "check_report.json"
    with open(report_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    if args.figures:
        from . import plots
        _ensure_dir(args.figures)
        plots.save_report_figure(os.path.join(args.figures, "report.png"), report)
        plots.save_state_figure(os.path.join(args.figures, "candidate.png"),
                                path, problem.C)
    return 0 if report.verdict else 1


def cmd_crowd(args):
    data = load_config(args.config)
    if data["kind"] != "crowd":
        raise ConfigError("crowd expects a crowd config")
    cfg = build_crowd(data)
    sol = solve_crowd(cfg, check_tol=args.tol)
    with open(args.out, "w") as fh:
        json.dump(sol.to_json_dict(), fh, indent=2)
        fh.write("\n")
    if args.emit_plot_data:
        from .crowd import crowd_to_sweeping
        _, u_const = crowd_to_sweeping(cfg)
        write_plot_data(args.emit_plot_data, sol.trajectories.as_path(u_const))
    if args.figures:
        from . import plots
        _ensure_dir(args.figures)
        plots.save_crowd_figure(os.path.join(args.figures, "crowd.png"),
                                sol.trajectories, cfg.R)
        if sol.report is not None:
            plots.save_report_figure(os.path.join(args.figures, "crowd_report.png"),
                                     sol.report)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="sweepopt",
        description="Simulate, optimize, and certify controlled sweeping "
                    "processes over polyhedral moving sets.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", required=True, help="problem config JSON")
        sp.add_argument("--emit-plot-data", default=None,
                        help="write long-format CSV for external plotting")
        sp.add_argument("--figures", default=None,
                        help="directory for rendered figures")

    sp = sub.add_parser("simulate", help="run the catching-up scheme")
    common(sp)
    sp.add_argument("--grid", type=int, default=200)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("optimize", help="solve the discrete problem")
    common(sp)
    sp.add_argument("--grid", type=int, default=200)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--multistart", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", default=None, help="summary JSON path")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("check", help="verify the optimality certificate of a solution")
    common(sp)
    sp.add_argument("solution", help="solution CSV to check")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--report", default=None, help="check report JSON path")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("crowd", help="solve the corridor crowd model")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_crowd)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleStart as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, NotInCone, NoFeasiblePattern) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SweepError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
