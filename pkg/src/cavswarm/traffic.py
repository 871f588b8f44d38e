"""Human-driven background traffic: IDM car following and grid forecasts.

HVs keep their lane.  The planner receives their future cells from a
constant-velocity extrapolation over the behavior horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .grid import MovingGrid, CellIndex, OutOfGridError, world_to_cell


@dataclass
class VehicleState:
    id: str
    kind: str          # "CAV" or "HV"
    s: float           # longitudinal position of the vehicle front reference point [m]
    y: float           # lateral position [m]
    v: float           # speed [m/s]
    a: float = 0.0     # last applied acceleration [m/s^2]
    lane: int = 1      # column index, 1-based
    heading: float = 0.0  # yaw relative to the road axis [rad]

    def copy(self) -> "VehicleState":
        return replace(self)


@dataclass(frozen=True)
class IdmParams:
    v0: float = 17.5        # desired speed [m/s]
    T: float = 1.2          # desired time headway [s]
    a_max: float = 1.4      # maximum acceleration [m/s^2]
    b: float = 2.0          # comfortable deceleration [m/s^2]
    s0_jam: float = 2.0     # minimum jam gap [m]
    delta_exp: float = 4.0  # acceleration exponent
    length: float = 5.0     # vehicle length used for net gaps [m]

    def __post_init__(self):
        for name in ("v0", "T", "a_max", "b", "s0_jam"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")
        if self.delta_exp < 1:
            raise ValueError("IDM acceleration exponent must be >= 1")


@dataclass
class HvForecast:
    """Per-step occupancy of every HV inside the grid over the horizon.

    cells[j][k] is HV j's cell at behavior step k, or None once it has left
    the grid.  detected_lane_events lists (k, j, col, row) detections of HVs
    in lanes other than the platoon's, used by the space-making constraints.
    front_hv_index points at the vehicle the swarm is overtaking, when it is
    inside the grid.
    """
    hv_ids: list[str]
    cells: list[list[CellIndex | None]]
    n_steps: int
    detected_lane_events: list[tuple[int, int, int, int]] = field(default_factory=list)
    front_hv_index: int | None = None

    def cell_of(self, j: int, k: int) -> CellIndex | None:
        return self.cells[j][k]

    def events_at(self, k: int) -> list[tuple[int, int, int, int]]:
        return [e for e in self.detected_lane_events if e[0] == k]


def idm_accel(ego: VehicleState, leader: VehicleState | None, p: IdmParams,
              a_bounds: tuple[float, float] = (-4.0, 3.0)) -> float:
    """IDM acceleration for ego, optionally interacting with a leader ahead.

    The leader term uses the net (bumper-to-bumper) gap.  A non-positive gap
    returns the emergency floor; the simulation raises its own collision flag.
    """
    a_min, a_cap = a_bounds
    v = max(0.0, ego.v)
    free = p.a_max * (1.0 - (v / p.v0) ** p.delta_exp)
    if leader is None:
        return min(max(free, a_min), a_cap)
    if leader.s <= ego.s:
        raise ValueError("leader must be ahead of ego")
    gap = leader.s - ego.s - p.length
    if gap <= 0:
        return a_min
    dv = v - leader.v
    s_star = p.s0_jam + v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    a = p.a_max * (1.0 - (v / p.v0) ** p.delta_exp - (s_star / gap) ** 2)
    return min(max(a, a_min), a_cap)


def step_hv(state: VehicleState, accel: float, dt: float) -> VehicleState:
    """Advance an HV one tick; speed is floored at zero, lane and y are kept.

    Position integrates trapezoidally with the floored speed, which matches
    the plain kinematic update whenever the floor is inactive.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_next = max(0.0, state.v + accel * dt)
    s_next = state.s + 0.5 * (state.v + v_next) * dt
    out = state.copy()
    out.s = s_next
    out.v = v_next
    out.a = accel
    return out


def forecast_cells(hvs: list[VehicleState], grid: MovingGrid, n_steps: int, dt_b: float,
                   platoon_lane: int | None = None, detect_window: int | None = 5) -> HvForecast:
    """Constant-velocity extrapolation of HV cells over the behavior horizon.

    HVs outside the grid at a step contribute no cell there.  An HV that is
    the foremost vehicle of a non-platoon lane when it first appears inside
    the grid is reported as a detected-lane event for up to detect_window
    consecutive steps (None keeps the detection alive for its whole in-grid
    span).  The front HV is the foremost in-grid HV of the platoon lane at
    the first step.
    """
    cells: list[list[CellIndex | None]] = []
    for hv in hvs:
        row: list[CellIndex | None] = []
        for k in range(n_steps):
            t = grid.t0 + k * dt_b
            s = hv.s + hv.v * k * dt_b
            try:
                row.append(world_to_cell(grid, t, s, hv.y))
            except OutOfGridError:
                row.append(None)
        cells.append(row)

    events: list[tuple[int, int, int, int]] = []
    front_hv = None
    if platoon_lane is not None:
        in_grid_platoon = [j for j in range(len(hvs)) if cells[j][0] is not None
                           and cells[j][0].col == platoon_lane]
        if in_grid_platoon:
            front_hv = max(in_grid_platoon, key=lambda j: cells[j][0].row)
        for j in range(len(hvs)):
            first = next((k for k in range(n_steps) if cells[j][k] is not None), None)
            if first is None or cells[j][first].col == platoon_lane:
                continue
            lane = cells[j][first].col
            ahead = [o for o in range(len(hvs)) if o != j and cells[o][first] is not None
                     and cells[o][first].col == lane and cells[o][first].row > cells[j][first].row]
            if ahead:
                continue  # not the lane leader when detected; its leader is blocked instead
            last = first + detect_window if detect_window is not None else n_steps
            for k in range(first, min(last, n_steps)):
                c = cells[j][k]
                if c is None:
                    break
                events.append((k, j, c.col, c.row))
    events.sort()
    return HvForecast(
        hv_ids=[hv.id for hv in hvs],
        cells=cells,
        n_steps=n_steps,
        detected_lane_events=events,
        front_hv_index=front_hv,
    )
