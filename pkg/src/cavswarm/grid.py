"""Moving cell lattice over a road segment.

The grid translates along the road at a fixed speed so that planning can
happen in a frame co-moving with the vehicle to be overtaken.  Rows count
rearward-to-forward starting at 1, columns are lanes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class GridError(ValueError):
    """Invalid gridding inputs."""


class OutOfGridError(ValueError):
    """A world position falls outside the grid footprint."""


@dataclass(frozen=True)
class CellIndex:
    row: int  # 1..n_rows, rearward to forward
    col: int  # 1..n_cols, one per lane

    def as_tuple(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class MovingGrid:
    t0: float            # grid epoch, absolute time [s]
    s0: float            # longitudinal origin at the epoch [m]
    v_cell: float        # grid translation speed [m/s]
    n_rows: int
    n_cols: int
    l_cell: float        # cell length [m]
    w_cell: float        # cell width [m]
    lane_y: tuple[float, ...] = field(default=())  # lateral lane centers, one per column

    def __post_init__(self):
        if self.n_cols < 1 or self.n_rows < 1:
            raise GridError(f"grid needs at least one row and column, got {self.n_rows}x{self.n_cols}")
        if self.l_cell <= 0 or self.w_cell <= 0:
            raise GridError("cell dimensions must be positive")
        if self.v_cell < 0:
            raise GridError("grid speed must be non-negative")
        if len(self.lane_y) != self.n_cols:
            raise GridError(f"lane_y needs {self.n_cols} entries, got {len(self.lane_y)}")
        diffs = [b - a for a, b in zip(self.lane_y, self.lane_y[1:])]
        if any(d <= 0 for d in diffs) and any(d >= 0 for d in diffs):
            raise GridError("lane_y must be strictly monotone")

    def contains_cell(self, cell: CellIndex) -> bool:
        return 1 <= cell.row <= self.n_rows and 1 <= cell.col <= self.n_cols

    def origin_at(self, t: float) -> float:
        """Longitudinal position of the grid's rear edge at time t."""
        return self.s0 + self.v_cell * (t - self.t0)


@dataclass(frozen=True)
class GriddingInputs:
    tail_cav_s: float
    lane_count: int
    cav_count: int
    front_hv_s: float
    front_hv_v: float
    l_cav: float
    d_safe: float
    mode: str = "overtaking"         # or "cruising"
    v_cruise_default: float = 20.0
    lane_width: float = 3.0
    lane_y: tuple[float, ...] | None = None   # overrides centered lanes when given
    l_cell_override: float | None = None      # force a cell length instead of l_cav + d_safe
    t0: float = 0.0


def default_lane_centers(lane_count: int, lane_width: float) -> tuple[float, ...]:
    """Lane centerlines symmetric about the road axis (three 3 m lanes -> -3, 0, +3)."""
    mid = (lane_count - 1) / 2.0
    return tuple((i - mid) * lane_width for i in range(lane_count))


def build_grid(inputs: GriddingInputs) -> MovingGrid:
    """Grid the road segment from the tail vehicle of the swarm to the front HV.

    Cell length is the vehicle length plus the safety distance, columns are
    lanes, and the row count covers the platoon plus the cells separating it
    from the front HV.  The grid moves at the front HV's speed while
    overtaking and at the default cruise speed otherwise.
    """
    if inputs.mode not in ("overtaking", "cruising"):
        raise GridError(f"unknown mode {inputs.mode!r}")
    if inputs.lane_count < 1:
        raise GridError("need at least one lane")
    if inputs.cav_count < 1:
        raise GridError("need at least one CAV")
    l_cell = inputs.l_cell_override if inputs.l_cell_override is not None else inputs.l_cav + inputs.d_safe
    if l_cell <= 0:
        raise GridError(f"cell length must be positive, got {l_cell}")
    span = inputs.front_hv_s - inputs.tail_cav_s
    if inputs.mode == "overtaking" and span <= 0:
        raise GridError("front HV must be ahead of the tail CAV in overtaking mode")
    n_rows = inputs.cav_count + max(0, math.ceil(span / l_cell))
    v_cell = inputs.front_hv_v if inputs.mode == "overtaking" else inputs.v_cruise_default
    lane_y = inputs.lane_y if inputs.lane_y is not None else default_lane_centers(inputs.lane_count, inputs.lane_width)
    return MovingGrid(
        t0=inputs.t0,
        s0=inputs.tail_cav_s,
        v_cell=v_cell,
        n_rows=n_rows,
        n_cols=inputs.lane_count,
        l_cell=l_cell,
        w_cell=inputs.lane_width,
        lane_y=tuple(lane_y),
    )


def world_to_cell(grid: MovingGrid, t: float, s: float, y: float) -> CellIndex:
    """Map a world position at time t to its cell, or raise OutOfGridError."""
    rel = s - grid.origin_at(t)
    row = math.floor(rel / grid.l_cell) + 1
    if not 1 <= row <= grid.n_rows:
        raise OutOfGridError(f"longitudinal position {s} is outside the grid at t={t} (row {row})")
    col = min(range(grid.n_cols), key=lambda i: abs(grid.lane_y[i] - y)) + 1
    if abs(grid.lane_y[col - 1] - y) > grid.w_cell / 2:
        raise OutOfGridError(f"lateral position {y} is outside all lanes")
    return CellIndex(row=row, col=col)


def cell_to_world(grid: MovingGrid, k: int, cell: CellIndex, dt_b: float) -> tuple[float, float, float]:
    """World (t, s, y) of a cell center at behavior step k (k=0 is the epoch)."""
    if k < 0:
        raise ValueError("behavior step must be non-negative")
    if not grid.contains_cell(cell):
        raise OutOfGridError(f"cell {cell} outside {grid.n_rows}x{grid.n_cols} grid")
    t = grid.t0 + k * dt_b
    s = grid.s0 + grid.v_cell * k * dt_b + grid.l_cell / 2 + (cell.row - 1) * grid.l_cell
    y = grid.lane_y[cell.col - 1]
    return (t, s, y)
