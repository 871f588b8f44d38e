import numpy as np
import pytest

from cavswarm.grid import MovingGrid
from cavswarm.tracker import (LatState, LonState, LqrProblem, TrackerParams,
                              build_lat_problem, build_lon_problem, clamp_controls,
                              lqr_solve)
from cavswarm.trajgen import build_reference_path, generate_waypoints


def qp_oracle(prob: LqrProblem):
    """Dense quadratic program over the stacked controls, solved by normal
    equations; independent of the backward recursion."""
    K = prob.horizon
    n, m = prob.A.shape[0], prob.B.shape[1]
    # X_k = F_k x0 + sum_j G_kj u_j + d_k
    F = [np.eye(n)]
    d = [np.zeros(n)]
    for k in range(K):
        F.append(prob.A @ F[-1])
        d.append(prob.A @ d[-1] + prob.affine(k))
    G = np.zeros((K + 1, K, n, m))
    for k in range(1, K + 1):
        for j in range(k):
            M = np.eye(n)
            for step in range(j + 1, k):
                M = prob.A @ M
            G[k, j] = M @ prob.B
    H = np.zeros((K * m, K * m))
    g = np.zeros(K * m)
    const = 0.0
    for k in range(K + 1):
        e0 = F[k] @ prob.x0 + d[k] - prob.x_des[k]
        Gk = np.concatenate([G[k, j] for j in range(K)], axis=1)
        H += Gk.T @ prob.Q @ Gk
        g += Gk.T @ prob.Q @ e0
        const += 0.5 * e0 @ prob.Q @ e0
    for k in range(K):
        H[k * m:(k + 1) * m, k * m:(k + 1) * m] += prob.R
    u = np.linalg.solve(H, -g)
    cost = 0.5 * u @ H @ u + g @ u + const
    return u.reshape(K, m), float(cost)


def rand_problem(rng, K=None, with_affine=True, with_des=True):
    n, m = 2, 1
    K = K if K is not None else rng.integers(2, 21)
    A = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    R = np.array([[float(rng.uniform(0.1, 3.0))]])
    x0 = rng.normal(size=n)
    x_des = rng.normal(size=(K + 1, n)) if with_des else np.zeros((K + 1, n))
    C = 0.3 * rng.normal(size=(K, n)) if with_affine else None
    return LqrProblem(A=A, B=B, Q=Q, R=R, x0=x0, x_des=x_des, horizon=int(K), C=C)


def test_zero_error_equilibrium_costs_nothing():
    # constant desired state consistent with zero-control dynamics
    A = np.array([[1.0, 0.03], [0.0, 1.0]])
    B = np.array([[0.0], [0.03]])
    x_des = np.array([[0.0, 0.0]] * 11)
    prob = LqrProblem(A=A, B=B, Q=np.diag([1.0, 1.0]), R=np.array([[1.0]]),
                      x0=np.array([0.0, 0.0]), x_des=x_des, horizon=10)
    sol = lqr_solve(prob)
    assert np.allclose(sol.U, 0.0)
    assert sol.cost == pytest.approx(0.0, abs=1e-15)


def test_scalar_toy_matches_qp():
    prob = LqrProblem(A=np.array([[1.0]]), B=np.array([[1.0]]), Q=np.array([[1.0]]),
                      R=np.array([[1.0]]), x0=np.array([1.0]),
                      x_des=np.zeros((3, 1)), horizon=2)
    sol = lqr_solve(prob)
    u_ref, cost_ref = qp_oracle(prob)
    assert np.allclose(sol.U, u_ref, atol=1e-9)
    assert sol.cost == pytest.approx(cost_ref, abs=1e-9)


def test_dp_matches_qp_on_random_problems():
    rng = np.random.default_rng(42)
    for _ in range(25):
        prob = rand_problem(rng)
        sol = lqr_solve(prob)
        u_ref, cost_ref = qp_oracle(prob)
        assert np.allclose(sol.U, u_ref, rtol=0, atol=1e-6 * max(1, np.abs(u_ref).max()))
        assert abs(sol.cost - cost_ref) <= 1e-8 * max(1.0, abs(cost_ref))


def test_dynamics_consistency():
    rng = np.random.default_rng(3)
    prob = rand_problem(rng, K=12)
    sol = lqr_solve(prob)
    for k in range(prob.horizon):
        pred = prob.A @ sol.X[k] + prob.B @ sol.U[k] + prob.affine(k)
        assert np.allclose(sol.X[k + 1], pred, atol=1e-12)


def test_single_control_perturbations_never_improve():
    rng = np.random.default_rng(11)
    prob = rand_problem(rng, K=8)
    sol = lqr_solve(prob)

    def rollout_cost(U):
        X = np.zeros_like(sol.X)
        X[0] = prob.x0
        cost = 0.0
        for k in range(prob.horizon):
            e = X[k] - prob.x_des[k]
            cost += 0.5 * e @ prob.Q @ e + 0.5 * U[k] @ prob.R @ U[k]
            X[k + 1] = prob.A @ X[k] + prob.B @ U[k] + prob.affine(k)
        e = X[-1] - prob.x_des[-1]
        return cost + 0.5 * e @ prob.Q @ e

    base = rollout_cost(sol.U)
    assert base == pytest.approx(sol.cost, rel=1e-12)
    for k in range(prob.horizon):
        for eps in (1e-3, -1e-3):
            U = sol.U.copy()
            U[k, 0] += eps
            assert rollout_cost(U) >= base - 1e-12


def lane_change_ref():
    g = MovingGrid(t0=0.0, s0=0.0, v_cell=17.5, n_rows=10, n_cols=3,
                   l_cell=10.0, w_cell=3.0, lane_y=(-3.0, 0.0, 3.0))
    wps = generate_waypoints([(1, 2), (2, 2), (3, 1), (4, 1), (5, 1)], g, 3.0)
    return build_reference_path(wps)


def test_lon_problem_matrices_and_bounds():
    ref = lane_change_ref()
    params = TrackerParams()
    prob = build_lon_problem(LonState(s=0.0, v=17.5), ref, params, horizon=100, t0=0.0)
    assert np.allclose(prob.A, [[1.0, 0.03], [0.0, 1.0]])
    assert np.allclose(prob.B.ravel(), [0.0, 0.03])
    assert (prob.u_min, prob.u_max) == (-4.0, 3.0)
    assert prob.speed_bounds == (0.0, 25.0)


def test_lon_constant_speed_reference_needs_no_control():
    # straight reference moving at the grid speed, vehicle already on profile
    g = MovingGrid(t0=0.0, s0=0.0, v_cell=17.5, n_rows=10, n_cols=1,
                   l_cell=10.0, w_cell=3.0, lane_y=(0.0,))
    ref = build_reference_path(generate_waypoints([(1, 1)] * 5, g, 3.0))
    params = TrackerParams()
    prob = build_lon_problem(LonState(s=0.0, v=17.5), ref, params, horizon=200, t0=0.0)
    sol = lqr_solve(prob)
    assert np.abs(sol.U).max() < 1e-9


def test_lat_problem_matrices():
    ref = lane_change_ref()
    params = TrackerParams(ds=0.5, wheelbase=2.8)
    prob = build_lat_problem(LatState(l=0.0, phi=0.0), ref, params, horizon=50)
    assert np.allclose(prob.A, [[1.0, 0.5], [0.0, 1.0]])
    assert prob.B[1, 0] == pytest.approx(0.17857142857142858)
    assert (prob.u_min, prob.u_max) == (-0.6, 0.6)


def test_lat_zero_curvature_zero_error_is_equilibrium():
    g = MovingGrid(t0=0.0, s0=0.0, v_cell=17.5, n_rows=10, n_cols=1,
                   l_cell=10.0, w_cell=3.0, lane_y=(0.0,))
    ref = build_reference_path(generate_waypoints([(1, 1)] * 4, g, 3.0))
    prob = build_lat_problem(LatState(l=0.0, phi=0.0), ref, TrackerParams(), horizon=80)
    sol = lqr_solve(prob)
    assert np.all(sol.U == 0.0)
    assert np.all(sol.X == 0.0)


def test_lat_lane_change_small_terminal_error():
    ref = lane_change_ref()
    params = TrackerParams(ds=1.0)  # coarser stations keep the dense oracle fast
    K = int(np.ceil(ref.length / params.ds))
    prob = build_lat_problem(LatState(l=0.0, phi=0.0), ref, params, horizon=K)
    sol = lqr_solve(prob)
    u_ref, cost_ref = qp_oracle(prob)
    assert abs(sol.cost - cost_ref) <= 1e-8 * max(1.0, abs(cost_ref))
    assert abs(sol.X[-1, 0]) < 0.05


def test_clamp_within_bounds_is_identity():
    rng = np.random.default_rng(5)
    prob = rand_problem(rng, K=10, with_affine=False, with_des=False)
    prob.u_min, prob.u_max = -1e6, 1e6
    sol = lqr_solve(prob)
    clamped = clamp_controls(sol, prob)
    assert np.allclose(clamped.U, sol.U, atol=1e-12)
    assert np.allclose(clamped.X, sol.X, atol=1e-12)


def test_clamp_clips_and_repropagates():
    A = np.array([[1.0, 0.03], [0.0, 1.0]])
    B = np.array([[0.0], [0.03]])
    x_des = np.tile([1000.0, 0.0], (11, 1))  # far target demands huge acceleration
    prob = LqrProblem(A=A, B=B, Q=np.diag([10.0, 1.0]), R=np.array([[0.01]]),
                      x0=np.array([0.0, 20.0]), x_des=x_des, horizon=10,
                      u_min=-4.0, u_max=3.0)
    sol = lqr_solve(prob)
    assert sol.U.max() > 3.0
    clamped = clamp_controls(sol, prob)
    assert clamped.U.max() <= 3.0 and clamped.U.min() >= -4.0
    for k in range(prob.horizon):
        pred = prob.A @ clamped.X[k] + prob.B @ clamped.U[k]
        assert np.allclose(clamped.X[k + 1], pred, atol=1e-12)


def test_clamp_holds_speed_at_bound():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    x_des = np.tile([1000.0, 30.0], (21, 1))
    prob = LqrProblem(A=A, B=B, Q=np.diag([0.0, 10.0]), R=np.array([[0.1]]),
                      x0=np.array([0.0, 24.9]), x_des=x_des, horizon=20,
                      u_min=-4.0, u_max=3.0, speed_bounds=(0.0, 25.0))
    clamped = clamp_controls(lqr_solve(prob), prob)
    assert clamped.X[:, 1].max() <= 25.0 + 1e-12


def test_policy_evaluates_feedback_law():
    rng = np.random.default_rng(9)
    prob = rand_problem(rng, K=6)
    sol = lqr_solve(prob)
    for k in range(prob.horizon):
        assert np.allclose(sol.policy(k, sol.X[k]), sol.U[k], atol=1e-12)
