import numpy as np
import pytest

from oracles import grid_qp_min, random_qp
from safecbf.qpsolver import QpProblem, QpStatus, kkt_residuals, solve_qp


def _proj(target, A, b):
    # min ||u - target||^2
    return QpProblem(2 * np.eye(2), -2 * np.asarray(target, float), A, b)


BOX1 = (np.vstack([np.eye(2), -np.eye(2)]), np.ones(4))


def test_clamp_to_box_face():
    s = solve_qp(_proj([3, 0], *BOX1))
    assert s.status is QpStatus.OPTIMAL
    assert np.allclose(s.z, [1, 0], atol=1e-12)
    assert s.kkt_residual <= 1e-9
    assert s.duals[0] > 0 and np.allclose(s.duals[1:], 0)


def test_interior_reference_unchanged():
    s = solve_qp(_proj([0.3, -0.2], *BOX1))
    assert np.allclose(s.z, [0.3, -0.2], atol=1e-12)
    assert np.allclose(s.duals, 0)


def test_halfspace_projection():
    A = np.vstack([[1.0, 1.0], np.eye(2), -np.eye(2)])
    b = np.array([2.0, 5, 5, 5, 5])
    s = solve_qp(_proj([2, 2], A, b))
    assert np.allclose(s.z, [1, 1], atol=1e-12)
    assert s.duals[0] == pytest.approx(2.0)


def test_no_constraints():
    p = QpProblem(np.diag([2.0, 4.0]), [-2.0, 4.0], np.zeros((0, 2)), np.zeros(0))
    s = solve_qp(p)
    assert np.allclose(s.z, [1, -1])


def test_empty_polytope_is_infeasible():
    A = np.array([[1.0, 0], [-1.0, 0]])
    b = np.array([-1.0, -1.0])  # x <= -1 and x >= 1
    s = solve_qp(_proj([0, 0], A, b))
    assert s.status is QpStatus.INFEASIBLE
    assert not s.ok


def test_degenerate_vertex():
    # three constraints through the optimum
    A = np.array([[1.0, 0], [0, 1.0], [1.0, 1.0], [-1, 0], [0, -1]])
    b = np.array([1.0, 1.0, 2.0, 5, 5])
    s = solve_qp(_proj([3, 3], A, b))
    assert s.ok
    assert np.allclose(s.z, [1, 1], atol=1e-12)
    assert s.kkt_residual <= 1e-9


def test_warm_start_same_answer():
    rng = np.random.default_rng(3)
    H, q, A, b, L = random_qp(rng, n_half=3)
    p = QpProblem(H, q, A, b)
    s0 = solve_qp(p)
    s1 = solve_qp(p, x0=s0.z)
    assert np.allclose(s0.z, s1.z, atol=1e-10)


@pytest.mark.parametrize("H", [np.eye(3), np.array([[1.0, 0], [0, 0]]), np.array([[1.0, 1], [0, 1]])])
def test_rejects_bad_hessian(H):
    with pytest.raises(ValueError):
        QpProblem(H, np.zeros(2), np.zeros((0, 2)), np.zeros(0))


def test_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), np.ones((3, 2)), np.ones(2))


def test_max_iterations_reported():
    # the optimum is a box corner, which takes at least two working-set changes
    s = solve_qp(_proj([5, 5], *BOX1), max_iter=1)
    assert s.status is QpStatus.MAX_ITERATIONS
    assert not s.ok and np.isfinite(s.kkt_residual)
    assert np.allclose(solve_qp(_proj([5, 5], *BOX1)).z, [1, 1])


def test_random_against_grid():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        H, q, A, b, L = random_qp(rng)
        s = solve_qp(QpProblem(H, q, A, b))
        assert s.ok
        res = kkt_residuals(QpProblem(H, q, A, b), s.z, s.duals)
        assert max(res.values()) <= 1e-9
        best = grid_qp_min(H, q, A, b, L, n=200)
        assert 0.5 * s.z @ H @ s.z + q @ s.z <= best + 1e-3


def test_higher_dimension_matches_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = 4
        R = rng.normal(size=(n, n))
        H = R @ R.T + np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(8, n))
        b = rng.uniform(0.1, 1.0, size=8)
        s = solve_qp(QpProblem(H, q, A, b))
        z = cp.Variable(n)
        prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(z, H) + q @ z), [A @ z <= b])
        prob.solve(solver=cp.CLARABEL)
        assert s.ok
        assert np.allclose(s.z, z.value, atol=1e-6)
