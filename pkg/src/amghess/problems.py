"""Structured unit-box model problems: mesh, matrices and hierarchy in one call."""
from __future__ import annotations

from dataclasses import dataclass

from .fem import Coefficient, FeProblem, assemble_mass, assemble_stiffness
from .hierarchy import Hierarchy, HierarchyConfig, build_hierarchy, geometric_prolongator
from .mesh import Mesh, build_structured_mesh


@dataclass(eq=False)
class Discretization:
    fe: FeProblem
    kappa: Coefficient
    hierarchy: Hierarchy
    meshes: list

    @property
    def mesh(self) -> Mesh:
        return self.fe.mesh


def structured_problem(dim, cells, mode="amg", kappa=None, dirichlet_faces=None,
                       config=None, n_levels=None) -> Discretization:
    """Discretize the unit box with ``cells`` Q1 cells per side and build a hierarchy.

    In geometric mode the coarse meshes halve ``cells`` until ``n_levels``
    (or ``config.max_levels``) levels exist or no state dofs would remain.
    """
    kappa = Coefficient.constant() if kappa is None else kappa
    config = HierarchyConfig(dim=dim) if config is None else config
    config.dim = dim
    mesh = build_structured_mesh(dim, cells)
    fe = FeProblem.create(mesh, dirichlet_faces)
    A = assemble_stiffness(fe, kappa)
    My = assemble_mass(fe, "state", "state")
    Mu = assemble_mass(fe, "control", "control")
    Myu = assemble_mass(fe, "state", "control")
    meshes = [mesh]
    if mode == "geometric":
        want = config.max_levels if n_levels is None else n_levels
        transfers = []
        c = cells
        while len(meshes) < want and c % 2 == 0:
            coarse = build_structured_mesh(dim, c // 2)
            try:
                FeProblem.create(coarse, fe.dirichlet_faces)
            except ValueError:
                break
            fine = meshes[-1]
            transfers.append((
                geometric_prolongator(fine, coarse, "state", fe.dirichlet_faces),
                geometric_prolongator(fine, coarse, "control"),
            ))
            meshes.append(coarse)
            c //= 2
        h = build_hierarchy(A, My, Mu, Myu, "geometric", config, transfers=transfers)
    else:
        if n_levels is not None:
            config.max_levels = n_levels
        A_control = assemble_stiffness(fe, kappa, space="control")
        h = build_hierarchy(A, My, Mu, Myu, mode, config, A_control=A_control)
    return Discretization(fe, kappa, h, meshes)
