"""Q1 finite element assembly on axis-aligned quad/hex meshes.

State space: Q1 functions vanishing on the Dirichlet faces (those vertices are
deleted from the system).  Control space: all Q1 functions, no boundary
condition.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import canonical
from .mesh import FACES, Mesh

_GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))
_GAUSS3 = (
    np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)]),
    np.array([5.0, 8.0, 5.0]) / 18.0,
)


@dataclass(frozen=True)
class Coefficient:
    """Scalar diffusion coefficient.

    ``kind="constant"`` is ``value`` everywhere.  ``kind="ball"`` is ``value``
    inside the closed ball ``|x - center| <= radius`` and 1 outside.
    """

    kind: str = "constant"
    value: float = 1.0
    center: tuple | None = None
    radius: float = 0.25

    def __post_init__(self):
        if self.kind not in ("constant", "ball"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError(f"coefficient value must be positive, got {self.value}")

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", float(value))

    @classmethod
    def ball(cls, alpha, center=None, radius=0.25):
        return cls("ball", float(alpha), None if center is None else tuple(center), float(radius))

    def __call__(self, x):
        x = np.atleast_2d(x)
        if self.kind == "constant":
            return np.full(x.shape[0], self.value)
        c = np.full(x.shape[1], 0.5) if self.center is None else np.asarray(self.center)
        inside = np.linalg.norm(x - c, axis=1) <= self.radius
        return np.where(inside, self.value, 1.0)


@dataclass(frozen=True, eq=False)
class FeProblem:
    mesh: Mesh
    dirichlet_faces: tuple
    state_dofs: np.ndarray
    control_dofs: np.ndarray

    @classmethod
    def create(cls, mesh, dirichlet_faces=None):
        """Default: homogeneous Dirichlet on every face of the box."""
        faces = FACES[: 2 * mesh.dim] if dirichlet_faces is None else tuple(dirichlet_faces)
        for f in faces:
            if f not in mesh.boundary:
                raise ValueError(f"unknown face {f!r} for a {mesh.dim}D mesh")
        fixed = mesh.boundary_vertices(faces)
        state = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
        if state.size == 0:
            raise ValueError("no state degrees of freedom left after Dirichlet elimination")
        return cls(mesh, faces, state, np.arange(mesh.n_vertices))

    @property
    def n_state(self):
        return self.state_dofs.size

    @property
    def n_control(self):
        return self.control_dofs.size

    def dofs(self, space):
        if space == "state":
            return self.state_dofs
        if space == "control":
            return self.control_dofs
        raise ValueError(f"space must be 'state' or 'control', got {space!r}")

    def interpolate(self, func, space="state"):
        """Nodal interpolant of ``func(points) -> values`` on the given space."""
        pts = self.mesh.vertices[self.dofs(space)]
        return np.asarray(func(pts), dtype=float).reshape(-1)

    def extend(self, y):
        """State vector -> full vertex vector with zeros on Dirichlet vertices."""
        full = np.zeros(self.mesh.n_vertices)
        full[self.state_dofs] = y
        return full


def _reference_q1(dim, rule):
    """Q1 basis values/gradients at tensor Gauss points on [0, 1]^dim."""
    nodes, weights = rule
    pts = np.array(list(itertools.product(nodes, repeat=dim)))[:, ::-1]
    w = np.prod(np.array(list(itertools.product(weights, repeat=dim))), axis=1)
    nc = 2**dim
    phi = np.ones((len(pts), nc))
    dphi = np.ones((len(pts), nc, dim))
    for k in range(nc):
        for d in range(dim):
            bit = (k >> d) & 1
            f = pts[:, d] if bit else 1.0 - pts[:, d]
            df = 1.0 if bit else -1.0
            phi[:, k] *= f
            for e in range(dim):
                dphi[:, k, e] *= df if e == d else f
    return pts, w, phi, dphi


def _global(mesh, local):
    """Scatter element matrices (ne, nc, nc) into a vertex-by-vertex CSR matrix."""
    el = mesh.elements
    nc = el.shape[1]
    rows = np.repeat(el, nc, axis=1).ravel()
    cols = np.tile(el, (1, nc)).ravel()
    n = mesh.n_vertices
    return canonical(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def quadrature_points(mesh, rule=_GAUSS2):
    lo, h = mesh.cell_extents()
    ref, w, phi, dphi = _reference_q1(mesh.dim, rule)
    x = lo[:, None, :] + ref[None, :, :] * h[:, None, :]
    return x, w, phi, dphi


def assemble_stiffness(problem, kappa=None, space="state"):
    """Stiffness matrix of ``a(y, v) = int kappa grad y . grad v``.

    ``space="control"`` returns the matrix on all vertices (no Dirichlet
    elimination); the hierarchy uses it to coarsen the control space.
    """
    kappa = Coefficient.constant() if kappa is None else kappa
    mesh = problem.mesh
    lo, h = mesh.cell_extents()
    x, w, _, dphi = quadrature_points(mesh)
    kq = np.asarray(kappa(x.reshape(-1, mesh.dim)), dtype=float).reshape(x.shape[:2])
    if not np.all(kq > 0):
        raise ValueError("coefficient must be positive at every quadrature point")
    vol = np.prod(h, axis=1)
    kw = kq * w[None, :] * vol[:, None]
    local = np.einsum("eq,qad,qbd,ed->eab", kw, dphi, dphi, 1.0 / h**2, optimize=True)
    full = _global(mesh, local)
    dofs = problem.dofs(space)
    return canonical(full[dofs][:, dofs])


def assemble_mass(problem, row_space="control", col_space="control"):
    """L2 mass matrix between the given spaces.

    ``("state", "state")`` is M_y, ``("control", "control")`` is M_u and
    ``("state", "control")`` is M_yu.
    """
    mesh = problem.mesh
    _, h = mesh.cell_extents()
    _, w, phi, _ = quadrature_points(mesh)
    vol = np.prod(h, axis=1)
    ref = np.einsum("q,qa,qb->ab", w, phi, phi)
    local = vol[:, None, None] * ref[None]
    full = _global(mesh, local)
    return canonical(full[problem.dofs(row_space)][:, problem.dofs(col_space)])


def assemble_load(problem, f):
    """Load vector ``(f, phi_i)`` on the state space, f evaluated at 2-point Gauss nodes."""
    mesh = problem.mesh
    _, h = mesh.cell_extents()
    x, w, phi, _ = quadrature_points(mesh)
    fq = np.asarray(f(x.reshape(-1, mesh.dim)), dtype=float).reshape(x.shape[:2])
    vol = np.prod(h, axis=1)
    local = np.einsum("eq,q,qa->ea", fq, w, phi) * vol[:, None]
    full = np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[problem.state_dofs]


def l2_error(mesh, values, exact, rule=_GAUSS3):
    """L2 norm of (Q1 interpolant of vertex ``values``) - ``exact`` on the mesh."""
    x, w, phi, _ = quadrature_points(mesh, rule)
    _, h = mesh.cell_extents()
    vol = np.prod(h, axis=1)
    uh = np.einsum("qa,ea->eq", phi, np.asarray(values)[mesh.elements])
    ex = np.asarray(exact(x.reshape(-1, mesh.dim)), dtype=float).reshape(x.shape[:2])
    return float(np.sqrt(np.sum(((uh - ex) ** 2) * w[None, :] * vol[:, None])))


def sine_product(x):
    """prod_k sin(pi x_k), the Dirichlet eigenfunction used by the manufactured problems."""
    return np.prod(np.sin(np.pi * np.atleast_2d(x)), axis=1)
