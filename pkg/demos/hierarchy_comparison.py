"""
Geometric versus algebraic two-grid preconditioners
===================================================

Both hierarchies are used as two-grid preconditioners for the reduced
Hessian with a small regularization weight.  The geometric iteration counts
fall as the mesh is refined.  The AMG counts stay bounded.
"""

from amghess.cli import parse_config, run

# the CLI driver produces the same table; flags are the whole recipe
text, ok = run(parse_config(["compare-hierarchies", "--dim", "3", "--cells", "4",
                             "--refinements", "3", "--beta", "1e-4"]))
print(text)

###############################################################################
# Each hierarchy level is a Galerkin product of the one above it.  The
# summary shows what the AMG setup built for the largest mesh.

from amghess.hierarchy import HierarchyConfig  # noqa: E402
from amghess.problems import structured_problem  # noqa: E402

d = structured_problem(3, 16, "amg", config=HierarchyConfig(coarse_cap=10))
print(d.hierarchy.summary_csv())
print("worst Galerkin mismatch:", max(d.hierarchy.galerkin_errors()))
