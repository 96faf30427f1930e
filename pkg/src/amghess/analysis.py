"""Verification instruments: two-grid approximation coefficients, dense
spectral distances and errors against the manufactured solution.

Dense routines build level operators as coefficient matrices. An operator X
on the control space is self-adjoint in the ``M_u`` inner product, so its
quadratic form is ``u^T (M_u X) u``; :func:`mass_form` returns that symmetric
matrix and is what the spectral distance consumes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import LinearOperator

from .fem import l2_error, sine_product
from .linalg import power_norm

DENSE_CAP = 2000


def _check_cap(n, cap):
    if n > cap:
        raise ValueError(f"dense computation on {n} dofs exceeds the cap of {cap}")


# ---------------------------------------------------------- approximation

def approximation_operator(problem, j):
    """Matrix-free ``u -> K_j u - S_j K_{j+1} Pi_j u`` with its Euclidean transpose."""
    h = problem.hierarchy
    if not 0 <= j <= len(h) - 2:
        raise ValueError(f"level {j} has no coarser level")
    lv = h[j]

    def matvec(u):
        u = np.asarray(u, dtype=float).reshape(-1)
        return problem.apply_K(j, u) - lv.S @ problem.apply_K(j + 1, problem.apply_projection(j, u))

    def rmatvec(y):
        # Pi_j^T v = M_{u,j} P_j M_{u,j+1}^-1 v
        y = np.asarray(y, dtype=float).reshape(-1)
        v = problem.apply_K_transpose(j + 1, lv.S.T @ y)
        if np.any(v):
            v = lv.Mu @ (lv.P @ problem.solve_mass(j + 1, v))
        return problem.apply_K_transpose(j, y) - v

    return LinearOperator((lv.n_state, lv.n_control), matvec=matvec, rmatvec=rmatvec, dtype=float)


def estimate_aj_tilde(problem, j, tol=1e-4, maxit=200):
    """Power-method estimate of the Euclidean norm of ``K_j - S_j K_{j+1} Pi_j``."""
    return power_norm(approximation_operator(problem, j), tol=tol, maxit=maxit)


def _sym_power(M, p):
    w, V = la.eigh(M)
    if np.any(w <= 0):
        raise ValueError("mass matrix is not positive definite")
    return (V * w**p) @ V.T


def dense_solution_operator(hierarchy, j):
    lv = hierarchy[j]
    return la.solve(lv.A.toarray(), lv.Myu.toarray(), assume_a="pos")


def dense_projection(hierarchy, j):
    """``Pi_j = M_{u,j+1}^-1 P_j^T M_{u,j}`` as a dense matrix."""
    lv, coarse = hierarchy[j], hierarchy[j + 1]
    return la.solve(coarse.Mu.toarray(), (lv.P.T @ lv.Mu).toarray(), assume_a="pos")


def dense_approximation_matrix(hierarchy, j):
    lv = hierarchy[j]
    _check_cap(max(lv.n_state, lv.n_control), DENSE_CAP)
    K = dense_solution_operator(hierarchy, j)
    Kc = dense_solution_operator(hierarchy, j + 1)
    return K - lv.S.toarray() @ Kc @ dense_projection(hierarchy, j)


def compute_aj_exact(hierarchy, j, cap=DENSE_CAP):
    """``|| M_y^{1/2} (K_j - S_j K_{j+1} Pi_j) M_u^{-1/2} ||_2`` by dense SVD."""
    lv = hierarchy[j]
    _check_cap(max(lv.n_state, lv.n_control), cap)
    L = dense_approximation_matrix(hierarchy, j)
    W = _sym_power(lv.My.toarray(), 0.5) @ L @ _sym_power(lv.Mu.toarray(), -0.5)
    return float(la.svdvals(W)[0])


def mode_tag(hierarchy):
    if hierarchy.mode == "geometric":
        return "geometric"
    return "amg-aggressive" if hierarchy.config.aggressive else "amg-no-aggressive"


@dataclass
class ApproxReport:
    """Per-level approximation coefficients of a hierarchy.

    ``a_tilde[j]`` is the estimate for level ``j``; ``a_exact`` is filled when
    the dense computation was requested.  ``ratios[j] = a_tilde[j] /
    a_tilde[j+1]``.
    """

    mode: str
    sizes: list
    a_tilde: list
    a_exact: list | None = None
    ratios: list = field(init=False)

    def __post_init__(self):
        a = self.a_tilde
        self.ratios = [a[j] / a[j + 1] if a[j + 1] > 0 else float("nan") for j in range(len(a) - 1)]

    def rows(self):
        """Table rows; the ratio ``a_tilde[j-1] / a_tilde[j]`` sits on row ``j``."""
        out = []
        for j, at in enumerate(self.a_tilde):
            out.append({
                "level": j,
                "N": self.sizes[j],
                "a_j": None if self.a_exact is None else self.a_exact[j],
                "a_tilde_j": at,
                "f": self.ratios[j - 1] if j > 0 else None,
            })
        return out

    def csv(self):
        from .optctl import format_value

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "N", "a_j", "a_tilde_j", "f"])
        for r in self.rows():
            w.writerow([format_value(v) for v in r.values()])
        return buf.getvalue()


def approximation_study(problem, exact=False, tol=1e-4):
    """ã_j (and optionally a_j) for every level that has a coarser neighbour."""
    h = problem.hierarchy
    n = len(h) - 1
    a_tilde = [estimate_aj_tilde(problem, j, tol) for j in range(n)]
    a_exact = [compute_aj_exact(h, j) for j in range(n)] if exact else None
    return ApproxReport(mode_tag(h), [h[j].n_control for j in range(n)], a_tilde, a_exact)


# ------------------------------------------------------- spectral distance

@dataclass
class SpectralDistanceResult:
    value: float
    lam_min: float
    lam_max: float


def _check_spd(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    scale = max(np.abs(X).max(), 1.0)
    if np.abs(X - X.T).max() > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    X = 0.5 * (X + X.T)
    if la.eigvalsh(X)[0] <= 0:
        raise ValueError(f"{name} is not positive definite")
    return X


def spectral_distance_dense(X, Y):
    """``d_sigma(X, Y) = max |ln lambda|`` over the generalized eigenvalues of ``X v = lambda Y v``."""
    X = _check_spd(X, "X")
    Y = _check_spd(Y, "Y")
    if X.shape != Y.shape:
        raise ValueError("X and Y differ in shape")
    lam = la.eigh(X, Y, eigvals_only=True)
    lo, hi = float(lam[0]), float(lam[-1])
    return SpectralDistanceResult(max(abs(np.log(lo)), abs(np.log(hi))), lo, hi)


def mass_form(M, X):
    """Symmetric matrix of the quadratic form ``u -> (X u, u)_M``."""
    M = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
    B = M @ np.asarray(X)
    return 0.5 * (B + B.T)


def operator_distance(M, X, Y):
    """Spectral distance of two ``M``-self-adjoint positive operators."""
    return spectral_distance_dense(mass_form(M, X), mass_form(M, Y))


def preconditioned_condition(M, W, G):
    """``cond(W G)`` for ``M``-self-adjoint positive ``W`` and ``G``."""
    lam = la.eigh(mass_form(M, G), mass_form(M, la.inv(W)), eigvals_only=True)
    return float(lam[-1] / lam[0])


# ------------------------------------------------ dense level operators

def dense_hessian(hierarchy, j, beta):
    """``G_j = M_u^-1 K^T M_y K + beta I``."""
    lv = hierarchy[j]
    _check_cap(lv.n_control, DENSE_CAP)
    K = dense_solution_operator(hierarchy, j)
    H = K.T @ (lv.My @ K)
    return la.solve(lv.Mu.toarray(), H, assume_a="pos") + beta * np.eye(lv.n_control)


def dense_extension(hierarchy, j, beta, X):
    """``E_j(X) = P_j X Pi_j + beta^-1 (I - P_j Pi_j)`` for a level ``j+1`` operator ``X``."""
    P = hierarchy[j].P.toarray()
    PPi = P @ dense_projection(hierarchy, j)
    return P @ X @ dense_projection(hierarchy, j) + (np.eye(P.shape[0]) - PPi) / beta


def dense_two_level(hierarchy, j, beta):
    """``V_j = P_j G_{j+1} Pi_j + beta (I - P_j Pi_j)``."""
    P = hierarchy[j].P.toarray()
    Pi = dense_projection(hierarchy, j)
    return P @ dense_hessian(hierarchy, j + 1, beta) @ Pi + beta * (np.eye(P.shape[0]) - P @ Pi)


def newton_step(G, Y):
    """``2 Y - Y G Y``."""
    return 2.0 * Y - Y @ G @ Y


def dense_mlas(hierarchy, beta, n_levels_used=None):
    """Dense ``W_0, ..., W_{l-1}`` of the multilevel recursion (``W_{l-1} = G^-1``)."""
    L = len(hierarchy) if n_levels_used is None else n_levels_used
    W = [None] * L
    W[L - 1] = la.inv(dense_hessian(hierarchy, L - 1, beta))
    for j in range(L - 2, -1, -1):
        E = dense_extension(hierarchy, j, beta, W[j + 1])
        W[j] = newton_step(dense_hessian(hierarchy, j, beta), E) if j > 0 else E
    return W


def measure_preconditioner_quality(problem, method="apply", cap=DENSE_CAP):
    """``d_sigma(W_0, G_0^-1)`` on a dense-size problem.

    ``method="apply"`` assembles ``W_0`` column by column from the matrix-free
    preconditioner with tightened inner tolerances; ``"dense"`` uses the dense
    recursion.
    """
    h = problem.hierarchy
    lv = h[0]
    _check_cap(lv.n_control, cap)
    G = dense_hessian(h, 0, problem.beta)
    if method == "dense":
        W = dense_mlas(h, problem.beta, problem.n_levels_used)[0]
    elif method == "apply":
        tight = problem.replace(forward_tol=1e-12, mass_tol=1e-12, coarse_tol=1e-12)
        n = lv.n_control
        W = np.column_stack([tight.apply_mlas(0, e) for e in np.eye(n)])
    else:
        raise ValueError(f"method must be 'apply' or 'dense', got {method!r}")
    return operator_distance(lv.Mu, W, la.inv(G))


# ---------------------------------------------------- manufactured solution

def sine_desired_state(dim, beta):
    """Desired state whose optimal control on the unit box is ``prod_k sin(pi x_k)``."""
    c = 1.0 / (dim * np.pi**2) + dim * np.pi**2 * beta

    def y_d(x):
        return c * sine_product(x)

    return y_d


def control_error_vs_exact(u_h, mesh):
    """L2 distance between the Q1 control ``u_h`` and ``prod_k sin(pi x_k)``."""
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_vertices,):
        raise ValueError("control vector must hold one value per mesh vertex")
    return l2_error(mesh, u_h, sine_product)


def observed_order(errors, ratio=2.0):
    """Convergence orders ``log(e_k / e_{k+1}) / log(ratio)``."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
