"""
Measuring a preconditioner by spectral distance
===============================================

``d(X, Y)`` is the largest ``|ln lambda|`` over the eigenvalues of the
pencil ``X v = lambda Y v``.  For the two-level preconditioner it shrinks
by roughly 4 per refinement.  Since ``ln cond = ln lambda_max -
ln lambda_min``, the condition number is at most ``exp(2 d)``.
"""

import numpy as np
import scipy.linalg as la

from amghess.analysis import dense_hessian, dense_mlas, operator_distance, preconditioned_condition
from amghess.problems import structured_problem

for beta in (1e-4, 1.0):
    for cells in (4, 8, 16):
        h = structured_problem(2, cells, "geometric", n_levels=2).hierarchy
        W = dense_mlas(h, beta, 2)[0]
        G = dense_hessian(h, 0, beta)
        r = operator_distance(h[0].Mu, W, la.inv(G))
        cond = preconditioned_condition(h[0].Mu, W, G)
        print(f"beta={beta:g} cells={cells:2d}: d={r.value:.3e}  "
              f"lambda in [{r.lam_min:.4f}, {r.lam_max:.4f}]  ln cond={np.log(cond):.3e}")
