"""Sparse kernels and Krylov/relaxation solvers.

Matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted, duplicate
free column indices, no stored zeros).  Matrix-free operators are
``scipy.sparse.linalg.LinearOperator`` instances; plain callables and arrays
are accepted wherever an operator is expected.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator


class SolverError(RuntimeError):
    """An iterative solve failed; ``history`` holds its relative residuals."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ConvergenceWarning(UserWarning):
    pass


def canonical(A):
    """Return ``A`` as CSR with sorted, summed indices and no explicit zeros."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def as_operator(op, n=None):
    """Wrap a matrix, LinearOperator or callable as a LinearOperator."""
    if isinstance(op, LinearOperator):
        return op
    if callable(op) and not sp.issparse(op) and not isinstance(op, np.ndarray):
        if n is None:
            raise ValueError("a size is required to wrap a plain callable")
        return LinearOperator((n, n), matvec=op, dtype=float)
    return aslinearoperator(op)


def spmv(A, x):
    """y = A x for a CSR matrix (row-by-row sequential summation)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def triple_product(R, A, P):
    """Galerkin product R A P as a canonical CSR matrix."""
    if R.shape[1] != A.shape[0] or A.shape[1] != P.shape[0]:
        raise ValueError(f"dimension mismatch: {R.shape} x {A.shape} x {P.shape}")
    return canonical(sp.csr_matrix(R) @ (sp.csr_matrix(A) @ sp.csr_matrix(P)))


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    breakdown: bool = False
    history: list = field(default_factory=list)


def cg(op, b, M_inner=None, precond=None, tol=1e-8, maxit=1000, x0=None, norm=None):
    """Preconditioned conjugate gradients in the inner product ``(x, y) = x^T M y``.

    ``op`` must be self-adjoint with respect to ``M_inner`` (identity when
    None) and ``precond`` self-adjoint positive definite in the same inner
    product.  Convergence is declared when the M-norm of the residual drops
    below ``tol`` times the M-norm of ``b``.  A nonpositive curvature
    ``(p, op p)`` or nonpositive ``(r, precond r)`` stops the iteration with
    ``breakdown=True``.  ``norm`` overrides the residual norm used for the
    stopping test.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    A = as_operator(op, n)
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match rhs length {n}")
    if M_inner is None:
        def inner(u, v):
            return float(u @ v)
    else:
        def inner(u, v):
            return float(u @ (M_inner @ v))
    apply_prec = (lambda r: r) if precond is None else as_operator(precond, n).matvec
    if norm is None:
        def norm(v):
            return np.sqrt(max(inner(v, v), 0.0))

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A.matvec(x) if x0 is not None else b.copy()
    bnorm = norm(b)
    if bnorm == 0.0:
        return CgResult(np.zeros(n), 0, 0.0, True)
    res = norm(r) / bnorm
    history = [res]
    if res <= tol:
        return CgResult(x, 0, res, True, history=history)
    z = np.asarray(apply_prec(r)).reshape(-1)
    rz = inner(r, z)
    if not rz > 0:
        return CgResult(x, 0, res, False, True, history)
    p = z.copy()
    for it in range(1, maxit + 1):
        q = np.asarray(A.matvec(p)).reshape(-1)
        pq = inner(p, q)
        if not pq > 0:
            return CgResult(x, it - 1, res, False, True, history)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        res = norm(r) / bnorm
        history.append(res)
        if res <= tol:
            return CgResult(x, it, res, True, history=history)
        z = np.asarray(apply_prec(r)).reshape(-1)
        rz_new = inner(r, z)
        if not rz_new > 0:
            return CgResult(x, it, res, False, True, history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CgResult(x, maxit, res, False, False, history)


@numba.njit(cache=True)
def _gs_sweep(indptr, indices, data, b, x, order):
    for i in order:
        s = b[i]
        d = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                d = data[k]
            else:
                s -= data[k] * x[j]
        x[i] = s / d


def gauss_seidel_sym(A, b, x=None, sweeps=1):
    """Symmetric Gauss-Seidel: ``sweeps`` forward+backward passes, returns a new vector."""
    A = sp.csr_matrix(A)
    if np.any(A.diagonal() == 0):
        raise ValueError("Gauss-Seidel needs a nonzero diagonal")
    b = np.ascontiguousarray(b, dtype=float)
    x = np.zeros_like(b) if x is None else np.array(x, dtype=float)
    n = b.shape[0]
    fwd = np.arange(n)
    bwd = fwd[::-1].copy()
    for _ in range(sweeps):
        _gs_sweep(A.indptr, A.indices, A.data, b, x, fwd)
        _gs_sweep(A.indptr, A.indices, A.data, b, x, bwd)
    return x


class SymmetricGaussSeidel(LinearOperator):
    """One symmetric Gauss-Seidel sweep from a zero guess, as an SPD operator."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        if np.any(A.diagonal() == 0):
            raise ValueError("Gauss-Seidel needs a nonzero diagonal")
        super().__init__(float, A.shape)
        self.A = A
        self._fwd = np.arange(A.shape[0])
        self._bwd = self._fwd[::-1].copy()

    def _matvec(self, b):
        b = np.ascontiguousarray(b, dtype=float).reshape(-1)
        x = np.zeros_like(b)
        A = self.A
        _gs_sweep(A.indptr, A.indices, A.data, b, x, self._fwd)
        _gs_sweep(A.indptr, A.indices, A.data, b, x, self._bwd)
        return x


def power_norm(op, tol=1e-8, maxit=1000, adjoint=None, seed=0):
    """Estimate the spectral norm of a (rectangular) operator by power iteration on op^T op.

    ``adjoint`` applies op^T; when omitted it is taken from the matrix or the
    LinearOperator's ``rmatvec``.  If ``maxit`` is reached the last estimate
    is returned and a :class:`ConvergenceWarning` is issued.
    """
    L = as_operator(op)
    rmatvec = L.rmatvec if adjoint is None else adjoint
    x = np.random.default_rng(seed).standard_normal(L.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(maxit):
        y = L.matvec(x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        z = np.asarray(rmatvec(y)).reshape(-1)
        zn = np.linalg.norm(z)
        if zn == 0.0:
            return new
        x = z / zn
        if abs(new - est) <= tol * new:
            return new
        est = new
    warnings.warn(f"power iteration did not reach tol={tol} in {maxit} steps", ConvergenceWarning)
    return est
