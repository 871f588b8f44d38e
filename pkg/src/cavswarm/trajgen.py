"""Waypoints and smooth reference paths from sequential cell plans.

A plan step maps to one time-stamped waypoint at the target cell center.
The lateral profile between waypoints is a clamped cubic spline (zero lateral
slope at both ends), which gives the C2 continuity the curvature-feedforward
tracker needs.  Desired arc length is linear in time between waypoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import CellIndex, MovingGrid, cell_to_world


@dataclass(frozen=True)
class Waypoint:
    t: float
    s: float
    y: float


def generate_waypoints(plan_row_col: list[tuple[int, int]], grid: MovingGrid,
                       dt_b: float) -> list[Waypoint]:
    """One waypoint per behavior step at the planned cell's center."""
    if not plan_row_col:
        raise ValueError("plan is empty")
    if dt_b <= 0:
        raise ValueError("behavior step length must be positive")
    return [Waypoint(*cell_to_world(grid, k, CellIndex(row, col), dt_b))
            for k, (row, col) in enumerate(plan_row_col)]


@dataclass
class ReferencePath:
    """Arc-length parameterized path with curvature and a desired time profile."""
    sigma: np.ndarray        # arc length samples, strictly increasing from 0
    x: np.ndarray            # longitudinal road coordinate at each sample
    y: np.ndarray            # lateral coordinate
    heading: np.ndarray      # path tangent angle [rad]
    kappa: np.ndarray        # curvature [1/m]
    t_knots: np.ndarray      # waypoint times
    sigma_knots: np.ndarray  # desired arc length at the waypoint times
    spline: CubicSpline | None = None  # exact lateral interpolant y(x)

    def y_of_x(self, x: float) -> float:
        """Exact interpolant evaluation (the samples are a linear resampling)."""
        if self.spline is None:
            return float(np.interp(x, self.x, self.y))
        return float(self.spline(np.clip(x, self.x[0], self.x[-1])))

    @property
    def length(self) -> float:
        return float(self.sigma[-1])

    def sigma_at_time(self, t: float) -> float:
        return float(np.interp(t, self.t_knots, self.sigma_knots))

    def v_des_at_time(self, t: float) -> float:
        """Desired speed: the per-segment slope of the arc-length profile."""
        idx = int(np.searchsorted(self.t_knots, t, side="right")) - 1
        idx = min(max(idx, 0), len(self.t_knots) - 2)
        dt = self.t_knots[idx + 1] - self.t_knots[idx]
        return float((self.sigma_knots[idx + 1] - self.sigma_knots[idx]) / dt)

    def sigma_of_x(self, x: float) -> float:
        return float(np.interp(x, self.x, self.sigma))

    def x_of_sigma(self, sigma: float) -> float:
        return float(np.interp(sigma, self.sigma, self.x))

    def y_of_sigma(self, sigma: float) -> float:
        return float(np.interp(sigma, self.sigma, self.y))

    def heading_of_sigma(self, sigma: float) -> float:
        return float(np.interp(sigma, self.sigma, self.heading))

    def kappa_of_sigma(self, sigma: float) -> float:
        return float(np.interp(sigma, self.sigma, self.kappa))

    def to_csv(self) -> str:
        lines = ["sigma,x,y,heading,kappa"]
        for row in zip(self.sigma, self.x, self.y, self.heading, self.kappa):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def build_reference_path(waypoints: list[Waypoint], ds: float = 0.5) -> ReferencePath:
    """C2 path through the waypoints, sampled at a fixed arc-length step.

    The lateral profile y(x) is a clamped cubic interpolant (zero slope at the
    first and last waypoint), so the path starts and ends aligned with the
    road axis.  Curvature comes from the interpolant's derivatives.
    """
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    if ds <= 0:
        raise ValueError("sample step must be positive")
    ts = np.array([w.t for w in waypoints])
    xs = np.array([w.s for w in waypoints])
    ys = np.array([w.y for w in waypoints])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("waypoint times must be strictly increasing")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("waypoint positions must be strictly increasing")

    spline = CubicSpline(xs, ys, bc_type="clamped")
    # oversampled grid for the arc-length integral, then uniform-sigma samples
    n_fine = max(int(np.ceil((xs[-1] - xs[0]) / (ds / 4))), len(xs)) + 1
    x_fine = np.linspace(xs[0], xs[-1], n_fine)
    slope = spline(x_fine, 1)
    integrand = np.hypot(1.0, slope)
    sigma_fine = np.concatenate(([0.0], np.cumsum(
        0.5 * (integrand[1:] + integrand[:-1]) * np.diff(x_fine))))
    total = sigma_fine[-1]
    sigma_grid = np.arange(0.0, total, ds)
    if total - sigma_grid[-1] > 1e-9:
        sigma_grid = np.append(sigma_grid, total)
    x_grid = np.interp(sigma_grid, sigma_fine, x_fine)
    x_grid[0], x_grid[-1] = xs[0], xs[-1]
    y_grid = spline(x_grid)
    d1 = spline(x_grid, 1)
    d2 = spline(x_grid, 2)
    heading = np.arctan(d1)
    kappa = d2 / (1.0 + d1 ** 2) ** 1.5
    sigma_knots = np.interp(xs, x_fine, sigma_fine)
    return ReferencePath(sigma=sigma_grid, x=x_grid, y=y_grid, heading=heading,
                         kappa=kappa, t_knots=ts, sigma_knots=sigma_knots,
                         spline=spline)


def waypoints_to_csv(cav_id: str, waypoints: list[Waypoint]) -> str:
    lines = ["cav_id,t,s,y"]
    for w in waypoints:
        lines.append(f"{cav_id},{w.t!r},{w.s!r},{w.y!r}")
    return "\n".join(lines) + "\n"
