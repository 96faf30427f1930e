"""
A nearly insulating ball
========================

The diffusion coefficient drops to ``alpha`` inside a ball.  With a tiny
``alpha`` the deeper levels see a poor coarse problem, and the 3-level
preconditioner can lose positive definiteness.  The solver notices the CG
breakdown and repeats the solve with one level fewer.
"""

import numpy as np

from amghess.fem import Coefficient
from amghess.hierarchy import HierarchyConfig
from amghess.optctl import ControlProblem, solve_control_problem
from amghess.problems import structured_problem

for alpha in (1e-4, 1e-2, 1.0):
    # Dirichlet conditions only on the bottom face
    d = structured_problem(3, 16, "amg", kappa=Coefficient.ball(alpha),
                           dirichlet_faces=("z0",), config=HierarchyConfig(coarse_cap=10))
    problem = ControlProblem(d.hierarchy, 1.0, np.ones(d.fe.n_state))
    plain = solve_control_problem(problem, "none", verify=False)
    print(f"alpha={alpha:g}: unpreconditioned {plain.iterations} iterations")
    for levels in (2, 3):
        rep = solve_control_problem(problem.replace(n_levels_used=levels), "multilevel", verify=False)
        note = f" (tried {rep.attempts}, breakdown recovered)" if len(rep.attempts) > 1 else ""
        print(f"    {levels}-level request: {rep.iterations} iterations with {rep.levels} levels{note}")
