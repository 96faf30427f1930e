"""Multilevel hierarchies for state and control spaces.

Smoothed aggregation (SA) builds the prolongators algebraically; the
geometric variant uses Q1 interpolation between nested structured meshes.
Either way every coarse matrix is the Galerkin product of the finer one.
"""
from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator
from scipy.sparse.linalg import norm as sparse_norm

from .linalg import SolverError, canonical, cg, gauss_seidel_sym, power_norm, triple_product
from .mesh import FACES

UNASSIGNED = -1


# ---------------------------------------------------------------- aggregation

@dataclass(frozen=True, eq=False)
class Aggregation:
    n_fine: int
    n_aggregates: int
    assignment: np.ndarray

    def members(self, k):
        return np.nonzero(self.assignment == k)[0]

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_aggregates)


def strength_graph(A, theta):
    """Strong off-diagonal couplings ``|a_ij| >= theta * sqrt(a_ii a_jj)``.

    Stored values are the normalised strengths ``|a_ij| / sqrt(a_ii a_jj)``.
    """
    A = canonical(A)
    d = np.abs(A.diagonal())
    C = A.tocoo()
    scale = np.sqrt(d[C.row] * d[C.col])
    s = np.abs(C.data) / np.where(scale > 0, scale, 1.0)
    keep = (C.row != C.col) & (s >= theta) & (s > 0)
    return canonical(sp.coo_matrix((s[keep], (C.row[keep], C.col[keep])), shape=A.shape))


@numba.njit(cache=True)
def _aggregate_passes(indptr, indices, data, n):
    assign = np.full(n, -1, dtype=np.int64)
    n_agg = 0
    # pass 1: seed from fully unassigned neighbourhoods
    for i in range(n):
        if assign[i] != -1:
            continue
        free = True
        for k in range(indptr[i], indptr[i + 1]):
            if assign[indices[k]] != -1:
                free = False
                break
        if not free:
            continue
        assign[i] = n_agg
        for k in range(indptr[i], indptr[i + 1]):
            assign[indices[k]] = n_agg
        n_agg += 1
    first = assign.copy()
    # pass 2: attach leftovers to the strongest neighbouring pass-1 aggregate
    for i in range(n):
        if first[i] != -1:
            continue
        best = -1
        best_s = -1.0
        for k in range(indptr[i], indptr[i + 1]):
            a = first[indices[k]]
            if a == -1:
                continue
            s = data[k]
            if s > best_s or (s == best_s and a < best):
                best = a
                best_s = s
        if best == -1:
            assign[i] = n_agg
            n_agg += 1
        else:
            assign[i] = best
    return assign, n_agg


def aggregate_graph(C):
    """Greedy standard aggregation of a strength graph ``C`` (CSR, strengths as values)."""
    C = sp.csr_matrix(C)
    n = C.shape[0]
    if n == 0:
        raise ValueError("cannot aggregate an empty matrix")
    assign, n_agg = _aggregate_passes(
        C.indptr.astype(np.int64), C.indices.astype(np.int64), C.data.astype(float), n
    )
    return Aggregation(n, int(n_agg), assign)


def aggregate(A, theta=0.25):
    """Standard SA aggregation of ``A`` with strength threshold ``theta``."""
    if A.shape[0] == 0:
        raise ValueError("cannot aggregate an empty matrix")
    if not 0 <= theta < 1:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    return aggregate_graph(strength_graph(A, theta))


def aggregate_aggressive(A, theta):
    """Aggregation on the squared strength graph (distance-two neighbourhoods)."""
    C = strength_graph(A, theta)
    C2 = canonical(C @ C + C)
    C2.setdiag(0)
    return aggregate_graph(canonical(C2))


def tentative_prolongator(agg):
    n = agg.n_fine
    return sp.csr_matrix(
        (np.ones(n), (np.arange(n), agg.assignment)), shape=(n, agg.n_aggregates)
    )


def spectral_radius_dinv_a(A, tol=1e-8, maxit=500):
    """lambda_max(D^-1 A) via power iteration on the similar matrix D^-1/2 A D^-1/2."""
    dis = 1.0 / np.sqrt(A.diagonal())
    B = sp.diags(dis) @ A @ sp.diags(dis)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return power_norm(B, tol=tol, maxit=maxit)


def smoothed_prolongator(A, agg, omega_factor=4.0 / 3.0, lam=None):
    """SA prolongator ``(I - omega D^-1 A) P_tent`` with ``omega = omega_factor / lambda_max``."""
    if agg.n_fine != A.shape[0]:
        raise ValueError("aggregation does not match the matrix size")
    T = tentative_prolongator(agg)
    if omega_factor == 0:
        return canonical(T)
    A = sp.csr_matrix(A)
    if lam is None:
        lam = spectral_radius_dinv_a(A)
    omega = omega_factor / lam
    DinvA = sp.diags(1.0 / A.diagonal()) @ A
    return canonical(T - omega * (DinvA @ T))


# ------------------------------------------------------ geometric transfers

def _free_vertices(mesh, space, dirichlet_faces):
    if space == "control":
        return np.arange(mesh.n_vertices)
    if space != "state":
        raise ValueError(f"space must be 'state' or 'control', got {space!r}")
    faces = FACES[: 2 * mesh.dim] if dirichlet_faces is None else dirichlet_faces
    return np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices(faces))


def geometric_prolongator(fine, coarse, space="control", dirichlet_faces=None):
    """Q1 interpolation from ``coarse`` to the nested uniform refinement ``fine``.

    Fine vertices are matched by coordinates, so any vertex numbering works.
    For ``space="state"`` rows and columns of Dirichlet vertices are dropped.
    """
    if fine.dim != coarse.dim:
        raise ValueError("meshes have different dimensions")
    dim = fine.dim
    lo, h = coarse.cell_extents()
    scale = float(h.min()) / 4
    lookup = {
        tuple(k): i
        for i, k in enumerate(np.round(fine.vertices / scale * 2**20).astype(np.int64))
    }
    lattice = np.array(list(itertools.product(range(3), repeat=dim)))[:, ::-1]
    corners = np.array([[(k >> d) & 1 for d in range(dim)] for k in range(2**dim)])
    # 1D weights of the two coarse corners at half-steps 0, 1, 2
    w1 = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    weights = np.prod(w1[lattice[:, None, :], corners[None, :, :]], axis=2)  # (3^d, 2^d)

    rows = np.full(fine.n_vertices, -1)
    entries = {}
    pts = lo[:, None, :] + 0.5 * lattice[None] * h[:, None, :]
    keys = np.round(pts / scale * 2**20).astype(np.int64)
    for e in range(coarse.n_elements):
        for m in range(lattice.shape[0]):
            i = lookup.get(tuple(keys[e, m]))
            if i is None:
                raise ValueError("meshes are not nested: coarse lattice point missing in fine mesh")
            if rows[i] != -1:
                continue
            rows[i] = e
            for k in range(2**dim):
                if weights[m, k] != 0.0:
                    entries[(i, int(coarse.elements[e, k]))] = weights[m, k]
    if np.any(rows == -1):
        raise ValueError("meshes are not nested: fine vertex outside the coarse lattice")
    ij = np.array(list(entries.keys()))
    P = sp.csr_matrix(
        (np.array(list(entries.values())), (ij[:, 0], ij[:, 1])),
        shape=(fine.n_vertices, coarse.n_vertices),
    )
    rf = _free_vertices(fine, space, dirichlet_faces)
    rc = _free_vertices(coarse, space, dirichlet_faces)
    return canonical(P[rf][:, rc])


# ---------------------------------------------------------------- hierarchy

@dataclass
class HierarchyConfig:
    """Coarsening parameters.

    ``theta=None`` picks 0.1 in 2D and 0.025 in 3D, just below the weakest
    Q1 coupling on a uniform grid (1/8 and 1/32 in normalised strength).
    """

    theta: float | None = None
    omega_factor: float = 4.0 / 3.0
    coarse_cap: int = 2000
    max_levels: int = 10
    aggressive: bool = False
    dim: int = 2

    def theta_for(self):
        if self.theta is not None:
            return self.theta
        return 0.1 if self.dim == 2 else 0.025


@dataclass(eq=False)
class Level:
    index: int
    A: sp.csr_matrix
    My: sp.csr_matrix
    Mu: sp.csr_matrix
    Myu: sp.csr_matrix
    S: sp.csr_matrix | None = None
    P: sp.csr_matrix | None = None
    A_control: sp.csr_matrix | None = None

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def n_control(self):
        return self.Mu.shape[0]


@dataclass(eq=False)
class Hierarchy:
    levels: list
    mode: str = "amg"
    config: HierarchyConfig = field(default_factory=HierarchyConfig)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, j):
        return self.levels[j]

    def galerkin_errors(self):
        """Max relative Frobenius mismatch of each coarse matrix against its Galerkin product."""
        errs = []
        for fine, coarse in zip(self.levels[:-1], self.levels[1:]):
            S, P = fine.S, fine.P
            pairs = [
                (coarse.A, triple_product(S.T, fine.A, S)),
                (coarse.My, triple_product(S.T, fine.My, S)),
                (coarse.Mu, triple_product(P.T, fine.Mu, P)),
                (coarse.Myu, triple_product(S.T, fine.Myu, P)),
            ]
            errs.append(max(sparse_norm(a - b) / sparse_norm(b) for a, b in pairs))
        return errs

    def summary(self):
        return [
            {
                "level": lv.index,
                "n_state": lv.n_state,
                "n_control": lv.n_control,
                "nnz_A": lv.A.nnz,
                "nnz_Mu": lv.Mu.nnz,
            }
            for lv in self.levels
        ]

    def summary_csv(self):
        buf = io.StringIO()
        rows = self.summary()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()


def _coarsen(lv, S, P):
    A_ctrl = None if lv.A_control is None else triple_product(P.T, lv.A_control, P)
    return Level(
        lv.index + 1,
        triple_product(S.T, lv.A, S),
        triple_product(S.T, lv.My, S),
        triple_product(P.T, lv.Mu, P),
        triple_product(S.T, lv.Myu, P),
        A_control=A_ctrl,
    )


def build_hierarchy(A, My, Mu, Myu, mode="amg", config=None, A_control=None, transfers=None):
    """Build the state/control hierarchy and all Galerkin coarse matrices.

    Parameters
    ----------
    mode : {"amg", "geometric"}
        ``"amg"`` coarsens with smoothed aggregation: S from ``A``, P from
        ``A_control`` (the stiffness matrix without Dirichlet elimination).
        ``"geometric"`` takes the prolongator pairs from ``transfers``.
    transfers : list of (S, P)
        Fine-to-coarse ordered prolongators for geometric mode.
    """
    config = HierarchyConfig() if config is None else config
    level = Level(0, canonical(A), canonical(My), canonical(Mu), canonical(Myu),
                  A_control=None if A_control is None else canonical(A_control))
    levels = [level]
    if mode == "geometric":
        if transfers is None:
            raise ValueError("geometric mode needs the list of (S, P) transfers")
        for S, P in transfers[: config.max_levels - 1]:
            if S.shape[0] != level.n_state or P.shape[0] != level.n_control:
                raise ValueError("transfer operator does not match level size")
            level.S, level.P = canonical(S), canonical(P)
            level = _coarsen(level, level.S, level.P)
            levels.append(level)
        return Hierarchy(levels, mode, config)
    if mode != "amg":
        raise ValueError(f"unknown hierarchy mode {mode!r}")
    if A_control is None:
        raise ValueError("amg mode needs A_control to coarsen the control space")

    theta = config.theta_for()
    while len(levels) < config.max_levels and level.n_control > config.coarse_cap:
        first = level.index == 0
        agg_fn = aggregate_aggressive if (config.aggressive and first) else aggregate
        agg_s = agg_fn(level.A, theta)
        agg_u = agg_fn(level.A_control, theta)
        if agg_s.n_aggregates >= level.n_state or agg_u.n_aggregates >= level.n_control:
            warnings.warn(f"coarsening stagnated at level {level.index}; stopping")
            break
        S = smoothed_prolongator(level.A, agg_s, config.omega_factor)
        P = smoothed_prolongator(level.A_control, agg_u, config.omega_factor)
        level.S, level.P = S, P
        level = _coarsen(level, S, P)
        levels.append(level)
    return Hierarchy(levels, mode, config)


# ----------------------------------------------------- forward AMG solver

class SmoothedAggregationSolver:
    """Plain SA V-cycle for an SPD stiffness matrix (forward and adjoint solves).

    Symmetric Gauss-Seidel smoothing, dense Cholesky on the coarsest level.
    """

    def __init__(self, A, theta=None, omega_factor=4.0 / 3.0, coarse_size=200, max_levels=20):
        A = canonical(A)
        if theta is None:
            # normalised Q1 couplings are >= 1/8 (2D) and >= 1/32 (3D)
            theta = 0.025
        self.As, self.Ps, self.Rs = [A], [], []
        while A.shape[0] > coarse_size and len(self.As) < max_levels:
            agg = aggregate(A, theta)
            if agg.n_aggregates >= A.shape[0]:
                break
            P = smoothed_prolongator(A, agg, omega_factor)
            A = triple_product(P.T, A, P)
            self.Ps.append(P)
            self.Rs.append(canonical(P.T))
            self.As.append(A)
        self._coarse = sla.cho_factor(self.As[-1].toarray())

    @property
    def n_levels(self):
        return len(self.As)

    def vcycle(self, b, lvl=0):
        A = self.As[lvl]
        if lvl == len(self.As) - 1:
            return sla.cho_solve(self._coarse, b)
        x = gauss_seidel_sym(A, b)
        r = b - A @ x
        x += self.Ps[lvl] @ self.vcycle(self.Rs[lvl] @ r, lvl + 1)
        return gauss_seidel_sym(A, b, x)

    def aspreconditioner(self):
        n = self.As[0].shape[0]
        return LinearOperator((n, n), matvec=self.vcycle, dtype=float)

    def solve(self, b, tol=1e-8, maxit=200):
        """AMG-preconditioned CG; raises :class:`SolverError` on failure."""
        res = cg(self.As[0], b, precond=self.aspreconditioner(), tol=tol, maxit=maxit)
        if not res.converged:
            raise SolverError(
                f"forward solve stalled at relative residual {res.residual:.3e}", res.history
            )
        return res.x
