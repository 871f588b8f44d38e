"""Finite-horizon LQR tracking solved by backward dynamic programming.

Longitudinal tracking runs on the time grid against the reference's moving
arc-length target; lateral tracking runs on the spatial grid with curvature
feedforward and a zero desired state.  The backward pass carries quadratic,
linear, and constant value-function coefficients so affine dynamics and
time-varying targets are handled exactly; the forward pass replays the
optimal policy.  Control bounds are enforced afterwards by clamping and
re-propagating through the true dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .trajgen import ReferencePath


@dataclass(frozen=True)
class LonState:
    s: float   # arc length along the reference path [m]
    v: float   # speed [m/s]


@dataclass(frozen=True)
class LatState:
    l: float     # lateral offset from the reference path [m]
    phi: float   # heading error relative to the path tangent [rad]


@dataclass(frozen=True)
class TrackerParams:
    dt: float = 0.03
    ds: float = 0.5
    q_s: float = 0.5
    q_v: float = 2.0
    r_lon: float = 1.0
    q_l: float = 2.0
    q_phi: float = 4.0
    r_lat: float = 50.0
    a_min: float = -4.0
    a_max: float = 3.0
    v_min: float = 0.0
    v_max: float = 25.0
    steer_limit: float = 0.6
    wheelbase: float = 2.8


@dataclass
class LqrProblem:
    A: np.ndarray                 # (n, n)
    B: np.ndarray                 # (n, m)
    Q: np.ndarray                 # (n, n), symmetric PSD
    R: np.ndarray                 # (m, m), positive definite
    x0: np.ndarray                # (n,)
    x_des: np.ndarray             # (K+1, n) per-step desired state
    horizon: int                  # K
    C: np.ndarray | None = None   # (K, n) per-step affine term
    u_min: float = -np.inf
    u_max: float = np.inf
    speed_bounds: tuple[float, float] | None = None  # bounds on state component 1

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.x_des = np.asarray(self.x_des, dtype=float).reshape(self.horizon + 1, -1)
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=float).reshape(self.horizon, -1)
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise ValueError("control weight must be positive definite")

    def affine(self, k: int) -> np.ndarray:
        if self.C is None:
            return np.zeros(self.A.shape[0])
        return self.C[k]


@dataclass
class LqrSolution:
    U: np.ndarray    # (K, m)
    X: np.ndarray    # (K+1, n)
    cost: float
    G: np.ndarray | None = None   # (K, m, n) feedback gains
    H: np.ndarray | None = None   # (K, m) feedforward terms

    def policy(self, k: int, x: np.ndarray) -> np.ndarray:
        """Evaluate the step-k feedback law at an arbitrary state."""
        k = min(max(k, 0), len(self.G) - 1)
        return self.G[k] @ x + self.H[k]


def _trajectory_cost(prob: LqrProblem, X: np.ndarray, U: np.ndarray) -> float:
    cost = 0.0
    for k in range(prob.horizon):
        e = X[k] - prob.x_des[k]
        cost += 0.5 * e @ prob.Q @ e + 0.5 * U[k] @ prob.R @ U[k]
    e = X[prob.horizon] - prob.x_des[prob.horizon]
    cost += 0.5 * e @ prob.Q @ e
    return float(cost)


def lqr_solve(prob: LqrProblem) -> LqrSolution:
    """Backward-forward sweep: concomitant matrices, then policy replay.

    The value function at each step is 0.5 x'Qx + D'x + E; the desired state
    and the affine dynamics term fold into the linear and constant parts, so
    a moving target costs nothing extra over the regulator recursion.
    """
    K = prob.horizon
    A, B, Q, R = prob.A, prob.B, prob.Q, prob.R
    Qt = Q.copy()
    Dt = -Q @ prob.x_des[K]
    gains: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = [None] * K
    for k in range(K - 1, -1, -1):
        c = prob.affine(k)
        M = R + B.T @ Qt @ B
        try:
            P = np.linalg.inv(M)
        except np.linalg.LinAlgError as err:  # unreachable with R > 0; kept defensive
            raise ArithmeticError("singular control Hessian in the backward pass") from err
        G = -P @ B.T @ Qt @ A
        H = -P @ B.T @ (Qt @ c + Dt)
        S = A + B @ G
        T = B @ H + c
        new_Dt = -Q @ prob.x_des[k] + G.T @ R @ H + S.T @ Qt @ T + S.T @ Dt
        Qt = Q + G.T @ R @ G + S.T @ Qt @ S
        Dt = new_Dt
        gains[k] = (G, H, S, T)
    n, m = A.shape[0], B.shape[1]
    X = np.zeros((K + 1, n))
    U = np.zeros((K, m))
    X[0] = prob.x0
    for k in range(K):
        G, H, S, T = gains[k]
        U[k] = G @ X[k] + H
        X[k + 1] = S @ X[k] + T
    G_all = np.stack([g[0] for g in gains])
    H_all = np.stack([g[1] for g in gains])
    return LqrSolution(U=U, X=X, cost=_trajectory_cost(prob, X, U), G=G_all, H=H_all)


def clamp_controls(sol: LqrSolution, prob: LqrProblem) -> LqrSolution:
    """Clip controls to their bounds and re-propagate the true dynamics.

    When speed bounds apply, the control is additionally shaped so the speed
    state never leaves its range (as far as the control bounds allow).
    """
    K = prob.horizon
    gain = prob.B[1, 0] if prob.speed_bounds is not None else 0.0
    X = np.zeros_like(sol.X)
    U = np.zeros_like(sol.U)
    X[0] = prob.x0
    for k in range(K):
        u = float(np.clip(sol.U[k][0], prob.u_min, prob.u_max))
        if prob.speed_bounds is not None and gain != 0.0:
            v_lo, v_hi = prob.speed_bounds
            v_next = X[k][1] + gain * u
            if v_next > v_hi:
                u = (v_hi - X[k][1]) / gain
            elif v_next < v_lo:
                u = (v_lo - X[k][1]) / gain
            u = float(np.clip(u, prob.u_min, prob.u_max))
        U[k] = u
        X[k + 1] = prob.A @ X[k] + prob.B @ U[k] + prob.affine(k)
    return LqrSolution(U=U, X=X, cost=_trajectory_cost(prob, X, U), G=sol.G, H=sol.H)


def build_lon_problem(state: LonState, ref: ReferencePath, params: TrackerParams,
                      horizon: int, t0: float) -> LqrProblem:
    """Time-domain tracking of the reference's arc-length profile."""
    if ref is None or len(ref.sigma) == 0:
        raise ValueError("empty reference path")
    dt = params.dt
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    x_des = np.array([[ref.sigma_at_time(t0 + k * dt), ref.v_des_at_time(t0 + k * dt)]
                      for k in range(horizon + 1)])
    return LqrProblem(A=A, B=B, Q=np.diag([params.q_s, params.q_v]),
                      R=np.array([[params.r_lon]]), x0=np.array([state.s, state.v]),
                      x_des=x_des, horizon=horizon,
                      u_min=params.a_min, u_max=params.a_max,
                      speed_bounds=(params.v_min, params.v_max))


def build_lat_problem(state: LatState, ref: ReferencePath, params: TrackerParams,
                      horizon: int, sigma0: float = 0.0) -> LqrProblem:
    """Spatial-domain tracking of zero lateral and heading error.

    The curvature enters as a per-station affine term, so the steering
    command carries the feedforward needed to hold the path.
    """
    if ref is None or len(ref.kappa) == 0:
        raise ValueError("reference path has no curvature samples")
    if np.any(~np.isfinite(ref.kappa)):
        raise ValueError("reference curvature contains non-finite samples")
    ds = params.ds
    A = np.array([[1.0, ds], [0.0, 1.0]])
    B = np.array([[0.0], [ds / params.wheelbase]])
    C = np.array([[0.0, -ds * ref.kappa_of_sigma(sigma0 + k * ds)]
                  for k in range(horizon)])
    return LqrProblem(A=A, B=B, Q=np.diag([params.q_l, params.q_phi]),
                      R=np.array([[params.r_lat]]), x0=np.array([state.l, state.phi]),
                      x_des=np.zeros((horizon + 1, 2)), horizon=horizon, C=C,
                      u_min=-params.steer_limit, u_max=params.steer_limit)


def control_log_csv(rows: list[tuple]) -> str:
    """Control log rows (cav_id, t, a_cmd, delta_cmd, s, y, v, phi) as CSV."""
    lines = ["cav_id,t,a_cmd,delta_cmd,s,y,v,phi"]
    for row in rows:
        cav_id, rest = row[0], row[1:]
        lines.append(cav_id + "," + ",".join(repr(float(v)) for v in rest))
    return "\n".join(lines) + "\n"
