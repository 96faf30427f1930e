"""
How well does a coarse level approximate the solution operator?
===============================================================

For consecutive levels ``j`` and ``j+1`` we measure the norm of
``K_j - S_j K_{j+1} Pi_j``: solve on the fine level, versus project the
control, solve on the coarse level and prolong the state.  Geometric
coarsening reduces this by about 4 per level.  Aggressive AMG coarsening
makes the first level much worse, after which the decay resumes.
"""

from amghess.analysis import approximation_study
from amghess.hierarchy import HierarchyConfig
from amghess.optctl import ControlProblem
from amghess.problems import structured_problem

# dense a_j is affordable at this size, so both columns are shown
d = structured_problem(2, 32, "geometric", n_levels=5)
rep = approximation_study(ControlProblem(d.hierarchy, 1.0), exact=True)
print("geometric, 2D")
print(rep.csv())

###############################################################################
# Same on a 3D AMG hierarchy, with and without the aggressive first step.
# Only the matrix-free estimate is computed here.

for aggressive in (False, True):
    cfg = HierarchyConfig(coarse_cap=10, aggressive=aggressive)
    d = structured_problem(3, 16, "amg", config=cfg, n_levels=5)
    rep = approximation_study(ControlProblem(d.hierarchy, 1.0))
    print(rep.mode, "sizes", [lv.n_control for lv in d.hierarchy.levels])
    print(rep.csv())
