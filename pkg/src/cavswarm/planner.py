"""Binary maneuver program for cooperative overtaking on the moving grid.

Each CAV occupies exactly one row and one column per behavior step.  The
program minimizes a weighted sum of forward-progress, movement, and
lane-regrouping costs subject to motion, collision, and space-making
constraints, all linear over 0-1 occupancy variables plus absolute-value
auxiliaries for the squared movement differences (exact for binaries).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .grid import MovingGrid, CellIndex
from .traffic import HvForecast


class PlannerError(ValueError):
    """Invalid planner inputs."""


class InfeasibleError(RuntimeError):
    """The maneuver program has no feasible assignment."""

    def __init__(self, message: str, family: str | None = None):
        super().__init__(message)
        self.family = family


class BudgetError(RuntimeError):
    """The solver ran out of its node or time budget before proving optimality."""


@dataclass(frozen=True)
class PlannerWeights:
    w_tar: float = 10.0   # forward-progress weight per step spent behind the platoon block
    w_lon: float = 1.0    # longitudinal movement weight
    w_lat: float = 1.0    # lateral movement / regrouping weight
    l_index: int = 2      # target regrouping lane (column)
    delta: int = 1        # 1 while any CAV is still impeded by the front HV

    def __post_init__(self):
        if min(self.w_tar, self.w_lon, self.w_lat) < 0:
            raise PlannerError("weights must be non-negative")
        if self.delta not in (0, 1):
            raise PlannerError("delta must be 0 or 1")


@dataclass
class Row:
    """One linear constraint: sum(coef * var) sense rhs."""
    coeffs: list[tuple[int, float]]
    sense: str           # "<=" or "=="
    rhs: float
    family: str
    note: str = ""


@dataclass
class BinaryProgram:
    n_vars: int
    objective: list[float]
    rows: list[Row]
    var_meta: list[tuple]          # ("r"|"c"|"dr"|"dc", cav, step, index)
    n_cav: int
    n_steps: int
    n_rows: int
    n_cols: int
    weights: PlannerWeights

    def var_r(self, i: int, k: int, p: int) -> int:
        return (i * self.n_steps + k) * self.n_rows + (p - 1)

    def var_c(self, i: int, k: int, q: int) -> int:
        base = self.n_cav * self.n_steps * self.n_rows
        return base + (i * self.n_steps + k) * self.n_cols + (q - 1)

    def var_dr(self, i: int, k: int, p: int) -> int:
        base = self.n_cav * self.n_steps * (self.n_rows + self.n_cols)
        return base + (i * (self.n_steps - 1) + k) * self.n_rows + (p - 1)

    def var_dc(self, i: int, k: int, q: int) -> int:
        base = self.n_cav * self.n_steps * (self.n_rows + self.n_cols)
        base += self.n_cav * (self.n_steps - 1) * self.n_rows
        return base + (i * (self.n_steps - 1) + k) * self.n_cols + (q - 1)

    def to_lp_text(self) -> str:
        """Plain-text LP-style listing for debugging."""
        out = ["minimize"]
        terms = [f"{c:+g} x{j}" for j, c in enumerate(self.objective) if c != 0]
        out.append("  " + " ".join(terms) if terms else "  0")
        out.append("subject to")
        for n, row in enumerate(self.rows):
            lhs = " ".join(f"{c:+g} x{j}" for j, c in row.coeffs)
            out.append(f"  {row.family}[{n}]: {lhs} {row.sense} {row.rhs:g}")
        out.append("binaries")
        out.append("  " + " ".join(f"x{j}" for j in range(self.n_vars)))
        return "\n".join(out)


@dataclass
class OccupancyPlan:
    """Solved per-CAV cell sequence over the horizon (step 0 is the start)."""
    cells: list[list[CellIndex]]
    n_steps: int
    objective_value: float

    def rows_cols(self) -> list[list[tuple[int, int]]]:
        return [[(c.row, c.col) for c in seq] for seq in self.cells]

    def to_json(self) -> str:
        payload = {
            "horizon": self.n_steps,
            "objective": self.objective_value,
            "cavs": [
                {"cav": i, "cells": [{"k": k, "row": c.row, "col": c.col}
                                     for k, c in enumerate(seq)]}
                for i, seq in enumerate(self.cells)
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OccupancyPlan":
        payload = json.loads(text)
        cavs = sorted(payload["cavs"], key=lambda e: e["cav"])
        cells = []
        for entry in cavs:
            seq = [CellIndex(rec["row"], rec["col"])
                   for rec in sorted(entry["cells"], key=lambda r: r["k"])]
            cells.append(seq)
        return cls(cells=cells, n_steps=payload["horizon"],
                   objective_value=payload["objective"])


@dataclass(frozen=True)
class BlockAssignment:
    """One space-making duty: a CAV holds the detected HV's lane within a row band."""
    cav: int
    col: int
    row_lo: int
    row_hi: int
    hv: int


def compute_delta(init_cells: list[CellIndex], forecast: HvForecast,
                  grid: MovingGrid, l_index: int) -> int:
    """1 while some CAV sits behind (or level with) the front HV in its lane."""
    j = forecast.front_hv_index
    if j is None:
        raise PlannerError("forecast carries no front HV")
    front = forecast.cells[j][0]
    if front is None:
        raise PlannerError("front HV is outside the grid at the first step")
    for cell in init_cells:
        if cell.col == front.col and cell.row <= front.row:
            return 1
    return 0


def compute_epsilon(forecast: HvForecast, k: int,
                    init_cells: list[CellIndex]) -> tuple[int, list[BlockAssignment]]:
    """Detection flag and blocking duties for behavior step k.

    Each HV detected in another lane is paired with the foremost CAV not yet
    assigned at this step; the duty pins that CAV to the HV's lane, between
    the HV's row and the CAV's own starting row.  HVs already ahead of every
    free CAV cannot be blocked and get no assignment.
    """
    if not 0 <= k < forecast.n_steps:
        raise PlannerError(f"step {k} outside forecast horizon {forecast.n_steps}")
    events = forecast.events_at(k)
    if not events:
        return 0, []
    if len(events) > len(init_cells):
        raise PlannerError(f"{len(events)} detected HVs at step {k} exceed {len(init_cells)} CAVs")
    order = sorted(range(len(init_cells)),
                   key=lambda i: (-init_cells[i].row, init_cells[i].col, i))
    assigned: set[int] = set()
    duties: list[BlockAssignment] = []
    for _, j, q_hv, p_hv in sorted(events, key=lambda e: (-e[3], e[1])):
        cav = next((i for i in order if i not in assigned), None)
        if cav is None or init_cells[cav].row <= p_hv:
            continue
        assigned.add(cav)
        duties.append(BlockAssignment(cav=cav, col=q_hv,
                                      row_lo=p_hv, row_hi=init_cells[cav].row, hv=j))
    return 1, duties


def build_program(grid: MovingGrid, init_cells: list[CellIndex], forecast: HvForecast,
                  weights: PlannerWeights, n_steps: int) -> BinaryProgram:
    """Assemble the linearized maneuver program over the behavior horizon."""
    n_cav = len(init_cells)
    R, C = grid.n_rows, grid.n_cols
    if n_steps < 2:
        raise PlannerError("horizon must span at least two steps")
    if forecast.n_steps < n_steps:
        raise PlannerError(f"forecast covers {forecast.n_steps} steps, horizon needs {n_steps}")
    if not 1 <= weights.l_index <= C:
        raise PlannerError(f"regrouping lane {weights.l_index} outside 1..{C}")
    seen: set[tuple[int, int]] = set()
    for cell in init_cells:
        if not grid.contains_cell(cell):
            raise PlannerError(f"initial cell {cell} outside the grid")
        if cell.as_tuple() in seen:
            raise PlannerError(f"two CAVs share the initial cell {cell}")
        seen.add(cell.as_tuple())

    n_occ = n_cav * n_steps * (R + C)
    n_aux = n_cav * (n_steps - 1) * (R + C)
    var_meta: list[tuple] = [None] * (n_occ + n_aux)
    objective = [0.0] * (n_occ + n_aux)
    prog = BinaryProgram(n_vars=n_occ + n_aux, objective=objective, rows=[],
                         var_meta=var_meta, n_cav=n_cav, n_steps=n_steps,
                         n_rows=R, n_cols=C, weights=weights)

    thr = R - n_cav  # rows at or below this index carry the forward-progress cost
    for i in range(n_cav):
        for k in range(n_steps):
            for p in range(1, R + 1):
                v = prog.var_r(i, k, p)
                var_meta[v] = ("r", i, k, p)
                if p <= thr:
                    objective[v] = weights.w_tar
            for q in range(1, C + 1):
                v = prog.var_c(i, k, q)
                var_meta[v] = ("c", i, k, q)
                objective[v] = weights.w_lat * (q - weights.l_index) ** 2
        for k in range(n_steps - 1):
            for p in range(1, R + 1):
                v = prog.var_dr(i, k, p)
                var_meta[v] = ("dr", i, k, p)
                objective[v] = weights.w_lon
            for q in range(1, C + 1):
                v = prog.var_dc(i, k, q)
                var_meta[v] = ("dc", i, k, q)
                objective[v] = weights.delta * weights.w_lat

    rows = prog.rows
    for i in range(n_cav):
        for k in range(n_steps):
            rows.append(Row([(prog.var_r(i, k, p), 1.0) for p in range(1, R + 1)],
                            "==", 1.0, "one_row", f"i={i},k={k}"))
            rows.append(Row([(prog.var_c(i, k, q), 1.0) for q in range(1, C + 1)],
                            "==", 1.0, "one_col", f"i={i},k={k}"))

    # movement auxiliaries: d >= x_next - x, d >= x - x_next
    for i in range(n_cav):
        for k in range(n_steps - 1):
            for p in range(1, R + 1):
                a, b, d = prog.var_r(i, k, p), prog.var_r(i, k + 1, p), prog.var_dr(i, k, p)
                rows.append(Row([(b, 1.0), (a, -1.0), (d, -1.0)], "<=", 0.0, "abs_diff"))
                rows.append(Row([(a, 1.0), (b, -1.0), (d, -1.0)], "<=", 0.0, "abs_diff"))
            for q in range(1, C + 1):
                a, b, d = prog.var_c(i, k, q), prog.var_c(i, k + 1, q), prog.var_dc(i, k, q)
                rows.append(Row([(b, 1.0), (a, -1.0), (d, -1.0)], "<=", 0.0, "abs_diff"))
                rows.append(Row([(a, 1.0), (b, -1.0), (d, -1.0)], "<=", 0.0, "abs_diff"))

    # one-cell-per-step motion: bans on non-adjacent transitions and diagonal moves
    for i in range(n_cav):
        for k in range(n_steps - 1):
            for p1 in range(1, R + 1):
                for p2 in range(1, R + 1):
                    if abs(p1 - p2) >= 2:
                        rows.append(Row([(prog.var_r(i, k, p1), 1.0),
                                         (prog.var_r(i, k + 1, p2), 1.0)],
                                        "<=", 1.0, "row_jump", f"i={i},k={k},p={p1}->{p2}"))
            for q1 in range(1, C + 1):
                for q2 in range(1, C + 1):
                    if abs(q1 - q2) >= 2:
                        rows.append(Row([(prog.var_c(i, k, q1), 1.0),
                                         (prog.var_c(i, k + 1, q2), 1.0)],
                                        "<=", 1.0, "col_jump", f"i={i},k={k},q={q1}->{q2}"))
            for p in range(1, R):
                for q in range(1, C):
                    for (pa, pb, qa, qb) in ((p, p + 1, q, q + 1), (p + 1, p, q + 1, q),
                                             (p + 1, p, q, q + 1), (p, p + 1, q + 1, q)):
                        rows.append(Row([(prog.var_r(i, k, pa), 1.0),
                                         (prog.var_r(i, k + 1, pb), 1.0),
                                         (prog.var_c(i, k, qa), 1.0),
                                         (prog.var_c(i, k + 1, qb), 1.0)],
                                        "<=", 3.0, "corner", f"i={i},k={k},p={pa},q={qa}"))

    # pairwise CAV collision: never the same cell at the same step
    for k in range(1, n_steps):
        for i1 in range(n_cav):
            for i2 in range(i1 + 1, n_cav):
                for p in range(1, R + 1):
                    for q in range(1, C + 1):
                        rows.append(Row([(prog.var_r(i1, k, p), 1.0),
                                         (prog.var_r(i2, k, p), 1.0),
                                         (prog.var_c(i1, k, q), 1.0),
                                         (prog.var_c(i2, k, q), 1.0)],
                                        "<=", 3.0, "cav_overlap",
                                        f"k={k},i={i1}/{i2},p={p},q={q}"))

    # Cell handoffs within one transition are unsafe unless both vehicles
    # move longitudinally in the same direction within the column (constant
    # 15 m chain): a laterally leaving or laterally entering vehicle is still
    # crossing the lane boundary while the other closes in, and same-column
    # exchanges would drive the pair through each other.
    for k in range(n_steps - 1):
        for i1 in range(n_cav):
            for i2 in range(n_cav):
                if i1 == i2:
                    continue
                for p in range(1, R + 1):
                    for q in range(1, C + 1):
                        for qt in (q - 1, q + 1):
                            if not 1 <= qt <= C:
                                continue
                            rows.append(Row([(prog.var_r(i2, k, p), 1.0),
                                             (prog.var_c(i2, k, q), 1.0),
                                             (prog.var_c(i2, k + 1, qt), 1.0),
                                             (prog.var_r(i1, k + 1, p), 1.0),
                                             (prog.var_c(i1, k + 1, q), 1.0)],
                                            "<=", 4.0, "handoff_out",
                                            f"k={k},enter={i1},leave={i2},p={p},q={q}"))
                            rows.append(Row([(prog.var_r(i2, k, p), 1.0),
                                             (prog.var_c(i2, k, q), 1.0),
                                             (prog.var_c(i1, k, qt), 1.0),
                                             (prog.var_r(i1, k + 1, p), 1.0),
                                             (prog.var_c(i1, k + 1, q), 1.0)],
                                            "<=", 4.0, "handoff_in",
                                            f"k={k},enter={i1},leave={i2},p={p},q={q}"))
                            if k == 1:
                                # right after a replan the cell snap can hide
                                # most of a cell of true spacing, so early
                                # merges need one extra step of clearance
                                rows.append(Row([(prog.var_r(i2, k - 1, p), 1.0),
                                                 (prog.var_c(i2, k - 1, q), 1.0),
                                                 (prog.var_c(i1, k, qt), 1.0),
                                                 (prog.var_r(i1, k + 1, p), 1.0),
                                                 (prog.var_c(i1, k + 1, q), 1.0)],
                                                "<=", 4.0, "handoff_in",
                                                f"k={k},enter={i1},leave={i2},p={p},q={q},lag=2"))
                for p in range(1, R):
                    for q in range(1, C + 1):
                        rows.append(Row([(prog.var_r(i1, k, p + 1), 1.0),
                                         (prog.var_c(i1, k, q), 1.0),
                                         (prog.var_r(i1, k + 1, p), 1.0),
                                         (prog.var_r(i2, k, p), 1.0),
                                         (prog.var_c(i2, k, q), 1.0),
                                         (prog.var_r(i2, k + 1, p + 1), 1.0)],
                                        "<=", 5.0, "lon_swap",
                                        f"k={k},down={i1},up={i2},p={p},q={q}"))

    # CAV-HV exclusion on forecast cells
    for k in range(1, n_steps):
        for j in range(len(forecast.cells)):
            cell = forecast.cells[j][k]
            if cell is None:
                continue
            for i in range(n_cav):
                rows.append(Row([(prog.var_r(i, k, cell.row), 1.0),
                                 (prog.var_c(i, k, cell.col), 1.0)],
                                "<=", 1.0, "hv_overlap", f"k={k},i={i},hv={j}"))

    # space making: pin assigned blockers to the detected HV's lane and row band
    for k in range(n_steps - 1):
        eps, duties = compute_epsilon(forecast, k, init_cells)
        if eps == 0:
            continue
        for duty in duties:
            rows.append(Row([(prog.var_c(duty.cav, k + 1, duty.col), 1.0)],
                            "==", 1.0, "space_col", f"k={k + 1},i={duty.cav}"))
            rows.append(Row([(prog.var_r(duty.cav, k + 1, p), 1.0)
                             for p in range(duty.row_lo, duty.row_hi + 1)],
                            "==", 1.0, "space_band",
                            f"k={k + 1},i={duty.cav},band={duty.row_lo}..{duty.row_hi}"))

    for i, cell in enumerate(init_cells):
        rows.append(Row([(prog.var_r(i, 0, cell.row), 1.0)], "==", 1.0, "initial_row", f"i={i}"))
        rows.append(Row([(prog.var_c(i, 0, cell.col), 1.0)], "==", 1.0, "initial_col", f"i={i}"))

    return prog


def quadratic_objective(rows_cols: list[list[tuple[int, int]]], weights: PlannerWeights,
                        n_grid_rows: int) -> float:
    """Cost of an occupancy assignment under the original quadratic objective.

    Squared one-hot differences reduce to 2 per actual move; the regrouping
    term is the squared lane distance to the target lane.  This evaluator is
    the reference the linearized program must reproduce exactly.
    """
    n_cav = len(rows_cols)
    thr = n_grid_rows - n_cav
    total = 0.0
    for seq in rows_cols:
        for k, (row, col) in enumerate(seq):
            if row <= thr:
                total += weights.w_tar
            total += weights.w_lat * (col - weights.l_index) ** 2
            if k + 1 < len(seq):
                nrow, ncol = seq[k + 1]
                if nrow != row:
                    total += 2.0 * weights.w_lon
                if ncol != col:
                    total += 2.0 * weights.delta * weights.w_lat
    return total


def program_objective(prog: BinaryProgram, rows_cols: list[list[tuple[int, int]]]) -> float:
    """Linear objective with auxiliaries at their forced absolute-difference values."""
    total = 0.0
    for i, seq in enumerate(rows_cols):
        for k, (row, col) in enumerate(seq):
            total += prog.objective[prog.var_r(i, k, row)]
            total += prog.objective[prog.var_c(i, k, col)]
            if k + 1 < len(seq):
                nrow, ncol = seq[k + 1]
                if nrow != row:
                    total += prog.objective[prog.var_dr(i, k, row)]
                    total += prog.objective[prog.var_dr(i, k, nrow)]
                if ncol != col:
                    total += prog.objective[prog.var_dc(i, k, col)]
                    total += prog.objective[prog.var_dc(i, k, ncol)]
    return total


@dataclass(frozen=True)
class Violation:
    family: str
    cav: int | None
    step: int
    detail: str


def validate_plan(plan: OccupancyPlan, grid: MovingGrid, forecast: HvForecast,
                  init_cells: list[CellIndex]) -> list[Violation]:
    """Re-check every constraint family directly on the decoded plan."""
    out: list[Violation] = []
    N = plan.n_steps
    for i, seq in enumerate(plan.cells):
        if len(seq) != N:
            out.append(Violation("one_cell", i, 0, f"plan length {len(seq)} != horizon {N}"))
            continue
        for k, cell in enumerate(seq):
            if not grid.contains_cell(cell):
                out.append(Violation("one_cell", i, k, f"cell {cell.as_tuple()} out of bounds"))
        if seq[0].as_tuple() != init_cells[i].as_tuple():
            out.append(Violation("initial", i, 0,
                                 f"starts at {seq[0].as_tuple()}, expected {init_cells[i].as_tuple()}"))
        for k in range(N - 1):
            dr = seq[k + 1].row - seq[k].row
            dc = seq[k + 1].col - seq[k].col
            if abs(dr) > 1:
                out.append(Violation("row_jump", i, k, f"row moved {dr} cells in one step"))
            if abs(dc) > 1:
                out.append(Violation("col_jump", i, k, f"column moved {dc} cells in one step"))
            if dr != 0 and dc != 0:
                out.append(Violation("corner", i, k,
                                     f"diagonal move p={seq[k].row},q={seq[k].col} -> "
                                     f"p={seq[k + 1].row},q={seq[k + 1].col}"))
    for k in range(1, N):
        occupied: dict[tuple[int, int], int] = {}
        for i, seq in enumerate(plan.cells):
            if k >= len(seq):
                continue
            key = seq[k].as_tuple()
            if key in occupied:
                out.append(Violation("cav_overlap", i, k,
                                     f"shares cell {key} with CAV {occupied[key]}"))
            else:
                occupied[key] = i
        for j in range(len(forecast.cells)):
            hv_cell = forecast.cells[j][k] if k < forecast.n_steps else None
            if hv_cell is None:
                continue
            for i, seq in enumerate(plan.cells):
                if k < len(seq) and seq[k].as_tuple() == hv_cell.as_tuple():
                    out.append(Violation("hv_overlap", i, k,
                                         f"occupies HV {j}'s cell {hv_cell.as_tuple()}"))
    for k in range(N - 1):
        for i1, seq1 in enumerate(plan.cells):
            for i2, seq2 in enumerate(plan.cells):
                if i1 == i2 or k + 1 >= min(len(seq1), len(seq2)):
                    continue
                lateral_entry = seq1[k + 1].col != seq1[k].col
                if (lateral_entry and k == 1
                        and seq1[k + 1].as_tuple() == seq2[k - 1].as_tuple()
                        and seq1[k + 1].as_tuple() != seq2[k].as_tuple()):
                    out.append(Violation("handoff_in", i1, k + 1,
                                         f"slides into {seq2[k - 1].as_tuple()} within two "
                                         f"steps of CAV {i2} vacating it"))
                if seq1[k + 1].as_tuple() != seq2[k].as_tuple():
                    continue
                if seq2[k + 1].col != seq2[k].col:
                    out.append(Violation("handoff_out", i1, k + 1,
                                         f"enters {seq2[k].as_tuple()} while CAV {i2} "
                                         f"is leaving it sideways"))
                elif lateral_entry:
                    out.append(Violation("handoff_in", i1, k + 1,
                                         f"slides into {seq2[k].as_tuple()} vacated by "
                                         f"CAV {i2} in the same step"))
                elif (seq2[k + 1].as_tuple() == seq1[k].as_tuple()
                        and seq1[k].col == seq1[k + 1].col and i1 < i2):
                    out.append(Violation("lon_swap", i1, k,
                                         f"exchanges cells with CAV {i2} in column {seq1[k].col}"))
    for k in range(N - 1):
        eps, duties = compute_epsilon(forecast, k, init_cells)
        if eps == 0:
            continue
        for duty in duties:
            cell = plan.cells[duty.cav][k + 1]
            if cell.col != duty.col:
                out.append(Violation("space_col", duty.cav, k + 1,
                                     f"blocker in column {cell.col}, duty requires {duty.col}"))
            if not duty.row_lo <= cell.row <= duty.row_hi:
                out.append(Violation("space_band", duty.cav, k + 1,
                                     f"blocker row {cell.row} outside {duty.row_lo}..{duty.row_hi}"))
    return out


def should_replan(executed_steps: int, plan_len: int, new_hv_entered: bool) -> bool:
    """Event-triggered update: replan on a new HV or once the plan is spent."""
    if executed_steps > plan_len:
        raise PlannerError("executed more steps than the plan holds")
    return bool(new_hv_entered) or executed_steps == plan_len
