"""Command-line driver: experiment families written as CSV tables.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines (keys
are the long option names, dashes or underscores); flags given on the
command line override the file.  Exit status is 0 when every row succeeded,
1 when some row failed (the remaining rows are still run) and 2 for
configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass

import numpy as np

from .analysis import approximation_study, control_error_vs_exact, sine_desired_state
from .fem import Coefficient
from .hierarchy import HierarchyConfig
from .linalg import SolverError
from .mesh import FACES
from .optctl import ControlProblem, format_value, solve_control_problem
from .problems import structured_problem

SUBCOMMANDS = ("solve", "aj-study", "compare-hierarchies", "varying-kappa")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ parsing

def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _faces(text):
    return tuple(f.strip() for f in str(text).split(",") if f.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p, dim=3, cells=16, refinements=1, beta="1e-2", mode="amg", coarse_cap=2000):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--dim", type=int, default=dim, help="space dimension (2 or 3)")
    p.add_argument("--cells", type=int, default=cells, help="cells per side of the coarsest mesh in the sweep")
    p.add_argument("--refinements", type=int, default=refinements, help="number of mesh sizes (cells doubled each time)")
    p.add_argument("--beta", type=_float_list, default=beta, help="regularization weights, comma-separated")
    p.add_argument("--mode", choices=("amg", "geometric"), default=mode, help="hierarchy construction")
    p.add_argument("--aggressive", type=_bool, default=False, help="aggressive first AMG coarsening")
    p.add_argument("--theta", type=float, default=None, help="strength threshold; None means 0.1 in 2D and 0.025 in 3D")
    p.add_argument("--coarse-cap", type=int, default=coarse_cap, help="stop AMG coarsening at this many control dofs")
    p.add_argument("--forward-tol", type=float, default=1e-8, help="relative tolerance of stiffness solves")
    p.add_argument("--mass-tol", type=float, default=1e-8, help="relative tolerance of mass solves")
    p.add_argument("--coarse-tol", type=float, default=1e-4, help="relative tolerance of the coarsest Hessian solve")
    p.add_argument("--outer-tol", type=float, default=1e-8, help="relative tolerance of the outer CG")
    p.add_argument("--maxit", type=int, default=500, help="outer CG iteration limit")
    p.add_argument("--output", default="-", help="CSV destination, '-' for stdout")
    p.add_argument("--timings", type=_bool, default=False, help="add a wall_time column (not reproducible)")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="amghess", description=__doc__.split("\n")[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the control problem for each beta and mesh size", formatter_class=fmt)
    _common(p)
    p.add_argument("--precond", choices=("none", "multilevel"), default="multilevel", help="outer preconditioner")
    p.add_argument("--levels", type=int, default=None, help="levels used by the preconditioner (default: all)")
    p.add_argument("--kappa", default="constant:1", help="'constant:VALUE' or 'ball:ALPHA'")
    p.add_argument("--dirichlet", type=_faces, default=None, help="Dirichlet faces, e.g. x0,z0 (default: all)")
    p.add_argument("--desired", choices=("sine", "one"), default="sine",
                   help="'sine' has a closed-form optimal control; 'one' is y_d = 1")

    p = sub.add_parser("aj-study", help="two-grid approximation coefficients per level", formatter_class=fmt)
    _common(p, dim=2, cells=32, refinements=4, beta="1", mode="geometric")
    p.add_argument("--exact", choices=("auto", "yes", "no"), default="auto",
                   help="also compute the mass-weighted a_j densely ('auto': when small enough)")

    p = sub.add_parser("compare-hierarchies", help="two-grid iterations, geometric vs AMG", formatter_class=fmt)
    _common(p, dim=3, cells=4, refinements=4, beta="1e-4")

    p = sub.add_parser("varying-kappa", help="ball coefficient, iterations per number of levels", formatter_class=fmt)
    _common(p, dim=3, cells=16, refinements=1, beta="1", coarse_cap=10)
    p.add_argument("--alpha", type=_float_list, default="1e-4,1e-3,1e-2,1e-1,1",
                   help="coefficient inside the ball, comma-separated")
    p.add_argument("--levels", type=_int_list, default="2,3",
                   help="preconditioner level counts to compare against 'none'")
    return parser, sub


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment.  Returns ``{key: (value, lineno)}``."""
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = (value, lineno)
    return out


def _apply_config(subparser, path):
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, (value, lineno) in read_config(path).items():
        if key not in actions:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for this subcommand")
        act = actions[key]
        conv = act.type or str
        try:
            v = conv(value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}")
        if act.choices is not None and v not in act.choices:
            raise ConfigError(f"{path}:{lineno}: {key!r} must be one of {list(act.choices)}")
        defaults[key] = v
    subparser.set_defaults(**defaults)


@dataclass
class ExperimentConfig:
    command: str
    dim: int
    cells: int
    refinements: int
    beta: list
    mode: str
    aggressive: bool
    theta: float | None
    coarse_cap: int
    forward_tol: float
    mass_tol: float
    coarse_tol: float
    outer_tol: float
    maxit: int
    output: str
    timings: bool
    precond: str = "multilevel"
    levels: object = None
    kappa: str = "constant:1"
    dirichlet: tuple | None = None
    desired: str = "sine"
    exact: str = "auto"
    alpha: list | None = None

    @classmethod
    def from_namespace(cls, ns):
        kw = {k: v for k, v in vars(ns).items() if k != "config"}
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.command not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.command!r}")
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if self.cells < 1:
            raise ConfigError(f"cells must be positive, got {self.cells}")
        if self.refinements < 1:
            raise ConfigError(f"refinements must be at least 1, got {self.refinements}")
        if not self.beta or any(not b > 0 for b in self.beta):
            raise ConfigError(f"beta values must be positive, got {self.beta}")
        for name in ("forward_tol", "mass_tol", "coarse_tol", "outer_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.theta is not None and not 0 <= self.theta < 1:
            raise ConfigError(f"theta must lie in [0, 1), got {self.theta}")
        if self.coarse_cap < 1 or self.maxit < 1:
            raise ConfigError("coarse_cap and maxit must be positive")
        if self.command == "solve":
            self.coefficient()
            if self.levels is not None and self.levels < 1:
                raise ConfigError(f"levels must be positive, got {self.levels}")
            faces = FACES[: 2 * self.dim]
            if self.dirichlet is not None and any(f not in faces for f in self.dirichlet):
                raise ConfigError(f"dirichlet faces must be among {list(faces)}, got {list(self.dirichlet)}")
        if self.command == "aj-study" and self.refinements < 1:
            raise ConfigError("aj-study needs at least one coarser level")
        if self.command == "varying-kappa":
            if not self.alpha or any(not a > 0 for a in self.alpha):
                raise ConfigError(f"alpha values must be positive, got {self.alpha}")
            if not self.levels or any(v < 2 for v in self.levels):
                raise ConfigError(f"levels must be integers >= 2, got {self.levels}")
        if self.command == "aj-study" and self.mode == "geometric" and self.cells % 2**self.refinements:
            raise ConfigError(f"cells={self.cells} cannot be halved {self.refinements} times")
        if self.command == "compare-hierarchies" and self.cells % 2:
            raise ConfigError(f"compare-hierarchies needs an even cell count, got {self.cells}")

    def coefficient(self):
        kind, _, value = self.kappa.partition(":")
        try:
            v = float(value) if value else 1.0
            if kind == "constant":
                return Coefficient.constant(v)
            if kind == "ball":
                return Coefficient.ball(v)
        except ValueError as exc:
            raise ConfigError(f"bad kappa {self.kappa!r}: {exc}")
        raise ConfigError(f"kappa must be 'constant:VALUE' or 'ball:ALPHA', got {self.kappa!r}")

    def hierarchy_config(self):
        return HierarchyConfig(theta=self.theta, coarse_cap=self.coarse_cap,
                               aggressive=self.aggressive, dim=self.dim)

    def sizes(self):
        return [self.cells * 2**k for k in range(self.refinements)]

    def tolerances(self):
        return dict(forward_tol=self.forward_tol, mass_tol=self.mass_tol,
                    coarse_tol=self.coarse_tol, outer_tol=self.outer_tol)


# ------------------------------------------------------------------- runners

def _status(report):
    if report.converged:
        return "ok"
    return "breakdown" if report.breakdown else "not-converged"


def _write(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(r.get(k)) for k in header])
    return buf.getvalue()


def run_solve(cfg, log):
    rows, ok = [], True
    kappa = cfg.coefficient()
    sine = cfg.desired == "sine"
    closed_form = sine and kappa.kind == "constant" and kappa.value == 1.0 and cfg.dirichlet is None
    for cells in cfg.sizes():
        d = structured_problem(cfg.dim, cells, cfg.mode, kappa, cfg.dirichlet,
                               cfg.hierarchy_config(), cfg.levels)
        for beta in cfg.beta:
            row = {"cells": cells, "N": d.fe.n_control, "beta": beta, "preconditioner": cfg.precond}
            try:
                f = sine_desired_state(cfg.dim, beta) if sine else (lambda x: np.ones(len(x)))
                levels = None if cfg.levels is None else min(cfg.levels, len(d.hierarchy))
                p = ControlProblem(d.hierarchy, beta, d.fe.interpolate(f), n_levels_used=levels,
                                   **cfg.tolerances())
                rep = solve_control_problem(p, cfg.precond, maxit=cfg.maxit, verify=False)
                row.update(levels=rep.levels, iterations=rep.iterations, final_residual=rep.final_residual,
                           wall_time=rep.wall_time, status=_status(rep))
                if closed_form:
                    row["l2_control_error"] = control_error_vs_exact(rep.u, d.mesh)
            except (SolverError, ValueError) as exc:
                row["status"] = "error"
                log(f"solve cells={cells} beta={beta}: {exc}")
            ok &= row["status"] == "ok"
            rows.append(row)
    header = ["cells", "N", "beta", "levels", "preconditioner", "iterations",
              "final_residual", "l2_control_error", "status"]
    return rows, header, ok


def run_aj_study(cfg, log):
    n_levels = cfg.refinements + 1
    hc = cfg.hierarchy_config()
    if cfg.mode == "amg":
        hc.coarse_cap = 1
    d = structured_problem(cfg.dim, cfg.cells, cfg.mode, config=hc, n_levels=n_levels)
    if len(d.hierarchy) < n_levels:
        log(f"hierarchy has only {len(d.hierarchy)} levels; reporting {len(d.hierarchy) - 1} rows")
    p = ControlProblem(d.hierarchy, cfg.beta[0], **cfg.tolerances())
    exact = cfg.exact == "yes" or (cfg.exact == "auto" and d.fe.n_control <= 2000)
    rep = approximation_study(p, exact=exact)
    rows = [dict(r, mode=rep.mode) for r in rep.rows()]
    return rows, ["mode", "level", "N", "a_j", "a_tilde_j", "f"], len(d.hierarchy) >= n_levels


def run_compare(cfg, log):
    rows, ok = [], True
    beta = cfg.beta[0]
    for cells in cfg.sizes():
        row = {"cells": cells, "beta": beta}
        for mode in ("geometric", "amg"):
            hc = cfg.hierarchy_config()
            hc.coarse_cap = 1
            try:
                d = structured_problem(cfg.dim, cells, mode, config=hc, n_levels=2)
                row["N"] = d.fe.n_control
                if len(d.hierarchy) < 2:
                    raise ValueError(f"{mode} hierarchy has a single level")
                y_d = d.fe.interpolate(sine_desired_state(cfg.dim, beta))
                p = ControlProblem(d.hierarchy, beta, y_d, n_levels_used=2, **cfg.tolerances())
                rep = solve_control_problem(p, "multilevel", maxit=cfg.maxit, verify=False)
                row[f"{mode}_iterations"] = rep.iterations
                row[f"{mode}_status"] = _status(rep)
                row["wall_time"] = row.get("wall_time", 0.0) + rep.wall_time
            except (SolverError, ValueError) as exc:
                row[f"{mode}_status"] = "error"
                log(f"compare cells={cells} {mode}: {exc}")
            ok &= row[f"{mode}_status"] == "ok"
        rows.append(row)
    header = ["cells", "N", "beta", "geometric_iterations", "amg_iterations", "geometric_status", "amg_status"]
    return rows, header, ok


def run_varying_kappa(cfg, log):
    rows, ok = [], True
    faces = ("z0",) if cfg.dim == 3 else ("y0",)
    beta = cfg.beta[0]
    for cells in cfg.sizes():
        for alpha in cfg.alpha:
            d = structured_problem(cfg.dim, cells, "amg", Coefficient.ball(alpha), faces, cfg.hierarchy_config())
            y_d = np.ones(d.fe.n_state)
            for req in [None] + list(cfg.levels):
                row = {"cells": cells, "N": d.fe.n_control, "alpha": alpha, "beta": beta,
                       "levels_requested": "none" if req is None else req}
                try:
                    if req is not None and req > len(d.hierarchy):
                        raise ValueError(f"hierarchy has only {len(d.hierarchy)} levels")
                    p = ControlProblem(d.hierarchy, beta, y_d, n_levels_used=req or len(d.hierarchy),
                                       **cfg.tolerances())
                    rep = solve_control_problem(p, "none" if req is None else "multilevel",
                                                maxit=cfg.maxit, verify=False)
                    row.update(levels=rep.levels, iterations=rep.iterations,
                               final_residual=rep.final_residual, wall_time=rep.wall_time,
                               status=_status(rep))
                    if len(rep.attempts) > 1:
                        log(f"alpha={alpha}: breakdown with {rep.attempts[0]} levels, "
                            f"solved with {rep.levels}")
                except (SolverError, ValueError) as exc:
                    row["status"] = "error"
                    log(f"varying-kappa alpha={alpha} levels={req}: {exc}")
                ok &= row["status"] == "ok"
                rows.append(row)
    header = ["cells", "N", "alpha", "beta", "levels_requested", "levels", "iterations",
              "final_residual", "status"]
    return rows, header, ok


RUNNERS = {
    "solve": run_solve,
    "aj-study": run_aj_study,
    "compare-hierarchies": run_compare,
    "varying-kappa": run_varying_kappa,
}


def parse_config(argv=None):
    parser, sub = build_parser()
    ns = parser.parse_args(argv)
    if ns.config:
        _apply_config(sub.choices[ns.command], ns.config)
        ns = parser.parse_args(argv)
    return ExperimentConfig.from_namespace(ns)


def run(cfg, log=None):
    """Run an experiment; returns ``(csv_text, all_rows_ok)``."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    rows, header, ok = RUNNERS[cfg.command](cfg, log)
    if cfg.timings:
        header = header + ["wall_time"]
    return _write(rows, header), ok


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"amghess: error: {exc}", file=sys.stderr)
        return 2
    text, ok = run(cfg)
    if cfg.output == "-":
        sys.stdout.write(text)
    else:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
