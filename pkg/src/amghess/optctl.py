"""Matrix-free reduced Hessian, L2-projection based two-level and multilevel preconditioners.

Vectors on level ``j`` are coefficient vectors in the level's state or
control basis.  Operators acting on controls (K*, G, T^-1, W) are
self-adjoint in the ``M_u`` inner product, not in the Euclidean one.
"""
from __future__ import annotations

import csv
import io
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .fem import l2_error
from .hierarchy import SmoothedAggregationSolver
from .linalg import SolverError, SymmetricGaussSeidel, cg


class ControlProblem:
    """Linear-quadratic elliptic control problem on a hierarchy.

    Parameters
    ----------
    hierarchy : Hierarchy
    beta : float
        Regularization weight, > 0.
    y_d : array or None
        Desired state (state-space coefficients on level 0).
    forward_tol, mass_tol, coarse_tol, outer_tol : float
        Relative residual tolerances of the stiffness solves, mass solves,
        coarsest Hessian solve and outer CG.
    n_levels_used : int or None
        Levels of the Hessian preconditioner; defaults to every level.
    """

    def __init__(self, hierarchy, beta, y_d=None, forward_tol=1e-8, mass_tol=1e-8,
                 coarse_tol=1e-4, outer_tol=1e-8, n_levels_used=None, _shared=None):
        if not beta > 0:
            raise ValueError(f"beta must be positive, got {beta}")
        for name, tol in [("forward_tol", forward_tol), ("mass_tol", mass_tol),
                          ("coarse_tol", coarse_tol), ("outer_tol", outer_tol)]:
            if not 0 < tol < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {tol}")
        n_levels_used = len(hierarchy) if n_levels_used is None else int(n_levels_used)
        if not 1 <= n_levels_used <= len(hierarchy):
            raise ValueError(f"n_levels_used must lie in [1, {len(hierarchy)}], got {n_levels_used}")
        self.hierarchy = hierarchy
        self.beta = float(beta)
        self.y_d = None if y_d is None else np.asarray(y_d, dtype=float)
        if self.y_d is not None and self.y_d.shape != (hierarchy[0].n_state,):
            raise ValueError("y_d must be a level-0 state vector")
        self.forward_tol = forward_tol
        self.mass_tol = mass_tol
        self.coarse_tol = coarse_tol
        self.outer_tol = outer_tol
        self.n_levels_used = n_levels_used
        # solver setups are independent of tolerances and shared by replace()
        self._shared = _shared if _shared is not None else {"forward": {}, "mass": {}}
        self.counts = Counter()

    def replace(self, **changes):
        """Copy with some parameters changed, reusing the AMG / smoother setups."""
        kw = dict(hierarchy=self.hierarchy, beta=self.beta, y_d=self.y_d,
                  forward_tol=self.forward_tol, mass_tol=self.mass_tol,
                  coarse_tol=self.coarse_tol, outer_tol=self.outer_tol,
                  n_levels_used=self.n_levels_used)
        kw.update(changes)
        return ControlProblem(**kw, _shared=self._shared)

    @property
    def coarsest(self):
        return self.n_levels_used - 1

    # ------------------------------------------------------------ inner solves

    def forward_solver(self, j):
        cache = self._shared["forward"]
        if j not in cache:
            cache[j] = SmoothedAggregationSolver(self.hierarchy[j].A)
        return cache[j]

    def solve_stiffness(self, j, f, tol=None):
        """A_j^-1 f by AMG-preconditioned CG."""
        self.counts["stiffness_solve", j] += 1
        return self.forward_solver(j).solve(f, self.forward_tol if tol is None else tol)

    def solve_mass(self, j, f):
        """M_{u,j}^-1 f by CG with a symmetric Gauss-Seidel preconditioner."""
        cache = self._shared["mass"]
        if j not in cache:
            cache[j] = SymmetricGaussSeidel(self.hierarchy[j].Mu)
        self.counts["mass_solve", j] += 1
        Mu = self.hierarchy[j].Mu
        res = cg(Mu, f, precond=cache[j], tol=self.mass_tol, maxit=500)
        if not res.converged:
            raise SolverError(f"mass solve stalled at {res.residual:.3e}", res.history)
        return res.x

    # --------------------------------------------------------------- operators

    def apply_K(self, j, u):
        """State ``y = A_j^-1 M_yu,j u``."""
        lv = self.hierarchy[j]
        u = np.asarray(u, dtype=float)
        if u.shape != (lv.n_control,):
            raise ValueError(f"control vector of length {lv.n_control} expected")
        f = lv.Myu @ u
        if not np.any(f):
            return np.zeros(lv.n_state)
        return self.solve_stiffness(j, f)

    def apply_K_transpose(self, j, y):
        """Euclidean transpose ``K_j^T y = M_yu^T A_j^-1 y``."""
        lv = self.hierarchy[j]
        if not np.any(y):
            return np.zeros(lv.n_control)
        return lv.Myu.T @ self.solve_stiffness(j, y)

    def apply_K_adjoint(self, j, y):
        """L2 adjoint ``K_j^* y = M_u^-1 M_yu^T A^-1 M_y y``."""
        lv = self.hierarchy[j]
        y = np.asarray(y, dtype=float)
        if y.shape != (lv.n_state,):
            raise ValueError(f"state vector of length {lv.n_state} expected")
        g = self.apply_K_transpose(j, lv.My @ y)
        if not np.any(g):
            return g
        return self.solve_mass(j, g)

    def apply_hessian(self, j, u):
        """``G_j u = K_j^* K_j u + beta u``."""
        self.counts["hessian", j] += 1
        return self.apply_K_adjoint(j, self.apply_K(j, u)) + self.beta * np.asarray(u, dtype=float)

    def apply_hessian_matrix(self, j, u):
        """``M_u G_j u = K^T M_y K u + beta M_u u`` (no mass solve)."""
        lv = self.hierarchy[j]
        return self.apply_K_transpose(j, lv.My @ self.apply_K(j, u)) + self.beta * (lv.Mu @ u)

    def apply_projection(self, j, u):
        """L2 projection ``Pi_j u = M_{u,j+1}^-1 P_j^T M_{u,j} u`` onto level j+1."""
        lv = self.hierarchy[j]
        return self.apply_projection_dual(j, lv.Mu @ u)

    def apply_projection_dual(self, j, r):
        """``M_{u,j+1}^-1 P_j^T r`` (the projection of ``M_{u,j}^-1 r``)."""
        rc = self.hierarchy[j].P.T @ r
        if not np.any(rc):
            return rc
        return self.solve_mass(j + 1, rc)

    def apply_two_level_inv(self, j, W_next, b, coarse_b=None):
        """``T_j^-1 b = P_j W_next(Pi_j b) + (b - P_j Pi_j b) / beta``.

        ``coarse_b`` may supply an already computed ``Pi_j b``.
        """
        self.counts["two_level_inv", j] += 1
        P = self.hierarchy[j].P
        c = self.apply_projection(j, b) if coarse_b is None else coarse_b
        Pc = P @ c
        return P @ W_next(c) + (b - Pc) / self.beta

    def apply_mlas(self, j, b):
        """Multilevel preconditioner ``W_j b``.

        Coarsest used level: Hessian solve.  Intermediate levels: one
        Newton correction ``u + T^-1 (b - G u)`` on ``u = T^-1 b``.  Level 0:
        ``T_0^-1 b`` only.
        """
        b = np.asarray(b, dtype=float)
        if j == self.coarsest:
            return self.coarsest_solve(b)
        W_next = lambda c: self.apply_mlas(j + 1, c)  # noqa: E731
        u = self.apply_two_level_inv(j, W_next, b)
        if j > 0:
            u = u + self.apply_two_level_inv(j, W_next, b - self.apply_hessian(j, u))
        return u

    def coarsest_solve(self, b):
        """Unpreconditioned CG on the coarsest used Hessian, M_u inner product."""
        j = self.coarsest
        self.counts["coarsest_solve", j] += 1
        n = self.hierarchy[j].n_control
        G = LinearOperator((n, n), matvec=lambda u: self.apply_hessian(j, u), dtype=float)
        res = cg(G, b, M_inner=self.hierarchy[j].Mu, tol=self.coarse_tol, maxit=2000)
        if res.breakdown or not res.converged:
            raise SolverError(f"coarsest Hessian solve failed at {res.residual:.3e}", res.history)
        return res.x

    def apply_preconditioner_dual(self, r):
        """``W_0 M_u^-1 r`` with the projection solves folded in (two mass solves on entry)."""
        r = np.asarray(r, dtype=float)
        if self.coarsest == 0:
            return self.coarsest_solve(self.solve_mass(0, r))
        z = self.solve_mass(0, r)
        c = self.apply_projection_dual(0, r)
        return self.apply_two_level_inv(0, lambda v: self.apply_mlas(1, v), z, coarse_b=c)

    # -------------------------------------------------------------- objective

    def rhs(self):
        """Right-hand side ``K^T M_y y_d`` of the normal equations."""
        if self.y_d is None:
            raise ValueError("problem has no desired state")
        return self.apply_K_transpose(0, self.hierarchy[0].My @ self.y_d)

    def objective(self, u):
        lv = self.hierarchy[0]
        e = self.apply_K(0, u) - self.y_d
        return 0.5 * float(e @ (lv.My @ e)) + 0.5 * self.beta * float(u @ (lv.Mu @ u))


REPORT_FIELDS = ["N", "beta", "levels", "preconditioner", "iterations",
                 "final_residual", "l2_control_error", "wall_time"]


@dataclass
class SolveReport:
    N: int
    beta: float
    levels: int
    preconditioner: str
    iterations: int
    final_residual: float
    converged: bool
    breakdown: bool
    u: np.ndarray = field(repr=False)
    history: list = field(default_factory=list, repr=False)
    objective: float | None = None
    verified_residual: float | None = None
    l2_control_error: float | None = None
    wall_time: float = 0.0
    attempts: list = field(default_factory=list)

    @property
    def indefinite(self):
        return self.breakdown

    def row(self, fields=REPORT_FIELDS):
        return {k: getattr(self, k) for k in fields}

    def csv_row(self, fields=REPORT_FIELDS):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([format_value(getattr(self, k)) for k in fields])
        return buf.getvalue()


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def solve_control_problem(problem, precond="none", mesh=None, exact=None, verify=True,
                          retry_on_breakdown=True, maxit=500):
    """Outer CG on ``(K^T M_y K + beta M_u) u = K^T M_y y_d``.

    With ``precond="multilevel"`` the preconditioner is ``W_0 M_u^-1``.  On a
    CG breakdown the solve is repeated with one level fewer (down to two
    levels, whose preconditioner is always positive definite).
    ``exact`` is a function of points; with ``mesh`` it gives the L2 error of
    the computed control.
    """
    if precond not in ("none", "multilevel"):
        raise ValueError(f"precond must be 'none' or 'multilevel', got {precond!r}")
    t0 = time.perf_counter()
    b = problem.rhs()
    n = b.shape[0]
    B = LinearOperator((n, n), matvec=lambda u: problem.apply_hessian_matrix(0, u), dtype=float)
    attempts = []
    current = problem

    def dual_norm(r):
        # M_u-norm of the Hessian-equation residual M_u^-1 r
        return np.sqrt(max(float(r @ problem.solve_mass(0, r)), 0.0))

    while True:
        attempts.append(current.n_levels_used)
        M = None
        if precond == "multilevel":
            M = LinearOperator((n, n), matvec=current.apply_preconditioner_dual, dtype=float)
        res = cg(B, b, precond=M, tol=problem.outer_tol, maxit=maxit, norm=dual_norm)
        can_retry = precond == "multilevel" and current.n_levels_used > 2
        if res.breakdown and retry_on_breakdown and can_retry:
            current = current.replace(n_levels_used=current.n_levels_used - 1)
            continue
        break
    levels = current.n_levels_used if precond == "multilevel" else 0
    report = SolveReport(
        N=n, beta=problem.beta, levels=levels, preconditioner=precond,
        iterations=res.iterations, final_residual=res.residual, converged=res.converged,
        breakdown=res.breakdown, u=res.x, history=res.history, attempts=attempts,
    )
    report.wall_time = time.perf_counter() - t0
    report.objective = problem.objective(res.x)
    if verify:
        tight = problem.replace(forward_tol=1e-10, mass_tol=1e-10)
        bt = tight.rhs()
        rt = bt - tight.apply_hessian_matrix(0, res.x)
        report.verified_residual = float(
            np.sqrt(rt @ tight.solve_mass(0, rt) / (bt @ tight.solve_mass(0, bt)))
        )
    if exact is not None and mesh is not None:
        report.l2_control_error = l2_error(mesh, res.x, exact)
    return report


def reports_csv(reports, fields=REPORT_FIELDS):
    return ",".join(fields) + "\n" + "".join(r.csv_row(fields) for r in reports)
