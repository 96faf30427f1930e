import numpy as np
import pytest

from amghess.analysis import sine_desired_state
from amghess.fem import l2_error, sine_product
from amghess.hierarchy import HierarchyConfig
from amghess.optctl import REPORT_FIELDS, ControlProblem, reports_csv, solve_control_problem
from amghess.problems import structured_problem

TIGHT = dict(forward_tol=1e-12, mass_tol=1e-12, coarse_tol=1e-12)


class Dense:
    """Dense level matrices and operators built directly with numpy."""

    def __init__(self, h, beta):
        self.h, self.beta = h, beta

    def mats(self, j):
        lv = self.h[j]
        return lv.A.toarray(), lv.My.toarray(), lv.Mu.toarray(), lv.Myu.toarray()

    def K(self, j):
        A, _, _, Myu = self.mats(j)
        return np.linalg.solve(A, Myu)

    def G(self, j):
        _, My, Mu, _ = self.mats(j)
        K = self.K(j)
        return np.linalg.solve(Mu, K.T @ My @ K) + self.beta * np.eye(Mu.shape[0])

    def Pi(self, j):
        Mu0 = self.h[j].Mu.toarray()
        Mu1 = self.h[j + 1].Mu.toarray()
        return np.linalg.solve(Mu1, self.h[j].P.toarray().T @ Mu0)

    def E(self, j, X):
        P, Pi = self.h[j].P.toarray(), self.Pi(j)
        return P @ X @ Pi + (np.eye(P.shape[0]) - P @ Pi) / self.beta

    def T(self, j):
        P, Pi = self.h[j].P.toarray(), self.Pi(j)
        return P @ self.G(j + 1) @ Pi + self.beta * (np.eye(P.shape[0]) - P @ Pi)


def minner(M, u, v):
    return float(u @ (M @ v))


@pytest.fixture
def prob(geo3_2d):
    rng = np.random.default_rng(11)
    return ControlProblem(geo3_2d.hierarchy, 0.05, rng.standard_normal(geo3_2d.fe.n_state), **TIGHT)


def test_parameter_validation(geo3_2d):
    h = geo3_2d.hierarchy
    with pytest.raises(ValueError):
        ControlProblem(h, 0.0)
    with pytest.raises(ValueError):
        ControlProblem(h, 1.0, outer_tol=1.0)
    with pytest.raises(ValueError):
        ControlProblem(h, 1.0, n_levels_used=4)
    with pytest.raises(ValueError):
        ControlProblem(h, 1.0, y_d=np.ones(3))


def test_K_zero_and_dense(prob):
    h = prob.hierarchy
    assert not np.any(prob.apply_K(0, np.zeros(h[0].n_control)))
    u = np.random.default_rng(0).standard_normal(h[0].n_control)
    ref = Dense(h, prob.beta).K(0) @ u
    assert np.linalg.norm(prob.apply_K(0, u) - ref) <= 1e-7 * np.linalg.norm(ref)


def test_K_on_sine_eigenfunction():
    errors = []
    for n in (16, 32):
        d = structured_problem(2, n, "geometric", n_levels=1)
        p = ControlProblem(d.hierarchy, 1.0)
        y = p.apply_K(0, d.fe.interpolate(sine_product, "control"))
        errors.append(l2_error(d.mesh, d.fe.extend(y), lambda x: sine_product(x) / (2 * np.pi**2)))
    assert 1.8 <= np.log2(errors[0] / errors[1]) <= 2.2


def test_adjoint_identity(prob):
    rng = np.random.default_rng(1)
    for j in range(3):
        lv = prob.hierarchy[j]
        u, y = rng.standard_normal(lv.n_control), rng.standard_normal(lv.n_state)
        lhs = minner(lv.My, prob.apply_K(j, u), y)
        rhs = minner(lv.Mu, u, prob.apply_K_adjoint(j, y))
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)
    assert not np.any(prob.apply_K_adjoint(0, np.zeros(prob.hierarchy[0].n_state)))


def test_hessian_dense_small_grid():
    d = structured_problem(2, 4, "geometric", n_levels=1)  # 3x3 interior state grid
    p = ControlProblem(d.hierarchy, 0.3, **TIGHT)
    G = Dense(d.hierarchy, 0.3).G(0)
    cols = np.column_stack([p.apply_hessian(0, e) for e in np.eye(d.fe.n_control)])
    np.testing.assert_allclose(cols, G, atol=1e-6 * np.abs(G).max())


def test_hessian_beta_dominant(prob):
    p = prob.replace(beta=100.0)
    lv = p.hierarchy[0]
    u = np.random.default_rng(2).standard_normal(lv.n_control)
    u /= np.sqrt(minner(lv.Mu, u, u))
    diff = p.apply_hessian(0, u) - 100.0 * u
    assert np.sqrt(minner(lv.Mu, diff, diff)) <= 0.01 * 100.0


def test_hessian_on_sine():
    d = structured_problem(2, 32, "geometric", n_levels=1)
    beta = 1e-3
    p = ControlProblem(d.hierarchy, beta)
    u = d.fe.interpolate(sine_product, "control")
    Gu = p.apply_hessian(0, u)
    expect = (1 / (4 * np.pi**4) + beta) * u
    Mu = d.hierarchy[0].Mu
    err = Gu - expect
    assert np.sqrt(minner(Mu, err, err)) <= 0.01 * np.sqrt(minner(Mu, expect, expect))


def test_projection_identities(prob):
    h = prob.hierarchy
    rng = np.random.default_rng(3)
    for j in range(2):
        uc = rng.standard_normal(h[j + 1].n_control)
        np.testing.assert_allclose(prob.apply_projection(j, h[j].P @ uc), uc, atol=1e-7 * np.abs(uc).max())
        u = rng.standard_normal(h[j].n_control)
        ref = Dense(h, prob.beta).Pi(j) @ u
        np.testing.assert_allclose(prob.apply_projection(j, u), ref, atol=1e-9 * np.abs(ref).max())
        # remove the range(P) component in the M_u inner product
        v = u - h[j].P @ ref
        assert np.abs(prob.apply_projection(j, v)).max() <= 1e-8 * np.abs(u).max()


def test_two_level_inverse_special_cases(prob):
    h = prob.hierarchy
    rng = np.random.default_rng(4)
    W = lambda c: 3.0 * c  # noqa: E731
    u = rng.standard_normal(h[0].n_control)
    b = u - h[0].P @ prob.apply_projection(0, u)
    np.testing.assert_allclose(prob.apply_two_level_inv(0, W, b), b / prob.beta, atol=1e-8 * np.abs(b).max() / prob.beta)
    bc = rng.standard_normal(h[1].n_control)
    out = prob.apply_two_level_inv(0, W, h[0].P @ bc)
    np.testing.assert_allclose(out, h[0].P @ (3.0 * bc), atol=1e-8 * np.abs(out).max())


def test_two_level_dense_inverse(prob):
    h = prob.hierarchy
    D = Dense(h, prob.beta)
    Ginv = np.linalg.inv(D.G(1))
    Tinv = np.column_stack([
        prob.apply_two_level_inv(0, lambda c: Ginv @ c, e) for e in np.eye(h[0].n_control)
    ])
    np.testing.assert_allclose(D.T(0) @ Tinv, np.eye(h[0].n_control), atol=1e-6)


def test_mlas_two_levels_is_two_grid(prob):
    p = prob.replace(n_levels_used=2)
    D = Dense(p.hierarchy, p.beta)
    W = np.column_stack([p.apply_mlas(0, e) for e in np.eye(p.hierarchy[0].n_control)])
    np.testing.assert_allclose(W, D.E(0, np.linalg.inv(D.G(1))), atol=1e-6 * np.abs(W).max())


def test_mlas_three_levels_dense_recursion(prob):
    D = Dense(prob.hierarchy, prob.beta)
    X = D.E(1, np.linalg.inv(D.G(2)))
    W1 = 2 * X - X @ D.G(1) @ X
    ref = D.E(0, W1)
    W = np.column_stack([prob.apply_mlas(0, e) for e in np.eye(prob.hierarchy[0].n_control)])
    np.testing.assert_allclose(W, ref, atol=1e-5 * np.abs(ref).max())


def test_mlas_w_cycle_counts(prob):
    prob.counts.clear()
    prob.apply_mlas(1, np.ones(prob.hierarchy[1].n_control))
    assert prob.counts["two_level_inv", 1] == 2
    assert prob.counts["hessian", 1] == 1
    assert prob.counts["coarsest_solve", 2] == 2
    prob.counts.clear()
    prob.apply_mlas(0, np.ones(prob.hierarchy[0].n_control))
    assert prob.counts["two_level_inv", 0] == 1 and prob.counts["hessian", 0] == 0


def test_coarsest_solve(geo3_2d):
    p = ControlProblem(geo3_2d.hierarchy, 0.05)
    h, j = p.hierarchy, p.coarsest
    assert not np.any(p.coarsest_solve(np.zeros(h[j].n_control)))
    b = np.random.default_rng(5).standard_normal(h[j].n_control)
    x = p.coarsest_solve(b)
    r = p.apply_hessian(j, x) - b
    Mu = h[j].Mu
    assert np.sqrt(minner(Mu, r, r)) <= 1e-4 * np.sqrt(minner(Mu, b, b)) * 1.01
    ref = np.linalg.solve(Dense(h, 0.05).G(j), b)
    assert np.linalg.norm(x - ref) <= 1e-3 * np.linalg.norm(ref)


@pytest.mark.parametrize("which", ["G", "Tinv", "W2"])
def test_self_adjoint_in_mass_inner_product(prob, which):
    h = prob.hierarchy
    Mu = h[0].Mu
    two = prob.replace(n_levels_used=2)
    op = {
        "G": lambda u: prob.apply_hessian(0, u),
        "Tinv": lambda u: prob.apply_two_level_inv(0, lambda c: prob.apply_mlas(1, c), u),
        "W2": lambda u: two.apply_mlas(0, u),
    }[which]
    rng = np.random.default_rng(6)
    for _ in range(3):
        u, v = rng.standard_normal(h[0].n_control), rng.standard_normal(h[0].n_control)
        a, b = minner(Mu, op(u), v), minner(Mu, u, op(v))
        nu, nv = np.sqrt(minner(Mu, u, u)), np.sqrt(minner(Mu, v, v))
        assert abs(a - b) <= 1e-6 * nu * nv * max(1.0, np.abs(a) / (nu * nv))


def test_two_level_inverse_positive(prob):
    p = prob.replace(n_levels_used=2)
    Mu = p.hierarchy[0].Mu
    rng = np.random.default_rng(7)
    U = rng.standard_normal((p.hierarchy[0].n_control, 100))
    W = np.column_stack([p.apply_mlas(0, e) for e in np.eye(U.shape[0])])
    q = np.einsum("ik,ik->k", U, Mu @ (W @ U))
    assert np.all(q > 0)


def test_spectral_floor(prob):
    Mu = prob.hierarchy[0].Mu
    rng = np.random.default_rng(8)
    for _ in range(5):
        u = rng.standard_normal(Mu.shape[0])
        assert minner(Mu, prob.apply_hessian(0, u), u) >= prob.beta * minner(Mu, u, u) - 1e-8


@pytest.mark.parametrize("dim,cells", [(2, 16), (3, 8)])
@pytest.mark.parametrize("beta", [1e-4, 1e-2, 1.0, 100.0])
def test_preconditioning_reduces_iterations(dim, cells, beta):
    d = structured_problem(dim, cells, "amg", config=HierarchyConfig(coarse_cap=10))
    y_d = d.fe.interpolate(sine_desired_state(dim, beta))
    p = ControlProblem(d.hierarchy, beta, y_d, n_levels_used=min(3, len(d.hierarchy)))
    none = solve_control_problem(p, "none", verify=False)
    ml = solve_control_problem(p, "multilevel", verify=False)
    assert none.converged and ml.converged
    assert ml.iterations < none.iterations


def test_report_contents(geo3_2d):
    beta = 1e-2
    y_d = geo3_2d.fe.interpolate(sine_desired_state(2, beta))
    p = ControlProblem(geo3_2d.hierarchy, beta, y_d)
    rep = solve_control_problem(p, "multilevel", mesh=geo3_2d.mesh, exact=sine_product)
    assert rep.converged and rep.levels == 3 and rep.N == 81
    assert rep.final_residual <= 1e-8 and rep.verified_residual <= 1e-6
    assert rep.l2_control_error < 0.05 and rep.objective > 0
    assert len(rep.history) == rep.iterations + 1
    text = reports_csv([rep])
    assert text.splitlines()[0] == ",".join(REPORT_FIELDS)
    assert text.splitlines()[1].startswith("81,0.01,3,multilevel,")


def test_bad_preconditioner_name(prob):
    with pytest.raises(ValueError):
        solve_control_problem(prob, "jacobi")


def test_breakdown_retry_reduces_levels():
    from amghess.fem import Coefficient

    d = structured_problem(3, 16, "amg", Coefficient.ball(1e-4), ("z0",), HierarchyConfig(coarse_cap=10))
    p = ControlProblem(d.hierarchy, 1.0, np.ones(d.fe.n_state), n_levels_used=3)
    rep = solve_control_problem(p, "multilevel", verify=False)
    assert rep.converged
    assert rep.attempts == [3, 2] and rep.levels == 2
