"""Exact branch-and-bound for the maneuver program.

The search assigns one cell per CAV per behavior step, step-major, with
constraint propagation decoded from the program rows.  The lower bound adds
each vehicle's single-vehicle optimal cost-to-go (a relaxation that drops
only the inter-vehicle exclusion rows), so pruning is tight while every
returned plan is provably optimal.  The search order is fixed, which makes
results deterministic; ties are kept by first discovery.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .grid import CellIndex
from .planner import BinaryProgram, BudgetError, InfeasibleError, OccupancyPlan

INF = float("inf")


@dataclass(frozen=True)
class SolveLimits:
    max_nodes: int = 20_000_000
    max_seconds: float | None = None


@dataclass
class SolveStats:
    nodes: int = 0
    incumbents: int = 0
    seconds: float = 0.0


class _Decoded:
    """Structural view of the program rows, indexed for the search."""

    def __init__(self, prog: BinaryProgram):
        n, N, R, C = prog.n_cav, prog.n_steps, prog.n_rows, prog.n_cols
        self.prog = prog
        self.init_row = [None] * n
        self.init_col = [None] * n
        self.banned_rt = [[set() for _ in range(N - 1)] for _ in range(n)]
        self.banned_ct = [[set() for _ in range(N - 1)] for _ in range(n)]
        self.corner = [[set() for _ in range(N - 1)] for _ in range(n)]
        self.hv_ban = [[set() for _ in range(N)] for _ in range(n)]
        self.forced_col = [[None] * N for _ in range(n)]
        self.allowed_rows = [[None] * N for _ in range(n)]
        self.overlap_pairs = [set() for _ in range(N)]
        self.handoff_out_pairs = [set() for _ in range(N)]  # (enterer, leaver) at entry step
        self.handoff_in_pairs = [set() for _ in range(N)]
        self.handoff_in2_pairs = [set() for _ in range(N)]  # two-step clearance variant
        self.lon_swap_pairs = [set() for _ in range(N)]
        meta = prog.var_meta
        for row in prog.rows:
            fam = row.family
            if fam in ("one_row", "one_col", "abs_diff"):
                continue
            if fam == "initial_row":
                _, i, _, p = meta[row.coeffs[0][0]]
                self.init_row[i] = p
            elif fam == "initial_col":
                _, i, _, q = meta[row.coeffs[0][0]]
                self.init_col[i] = q
            elif fam == "row_jump":
                (_, i, k, p1), (_, _, _, p2) = meta[row.coeffs[0][0]], meta[row.coeffs[1][0]]
                self.banned_rt[i][k].add((p1, p2))
            elif fam == "col_jump":
                (_, i, k, q1), (_, _, _, q2) = meta[row.coeffs[0][0]], meta[row.coeffs[1][0]]
                self.banned_ct[i][k].add((q1, q2))
            elif fam == "corner":
                (_, i, k, pa), (_, _, _, pb) = meta[row.coeffs[0][0]], meta[row.coeffs[1][0]]
                (_, _, _, qa), (_, _, _, qb) = meta[row.coeffs[2][0]], meta[row.coeffs[3][0]]
                self.corner[i][k].add((pa, pb, qa, qb))
            elif fam == "cav_overlap":
                (_, i1, k, _), (_, i2, _, _) = meta[row.coeffs[0][0]], meta[row.coeffs[1][0]]
                self.overlap_pairs[k].add((min(i1, i2), max(i1, i2)))
            elif fam == "handoff_out":
                (_, i2, _, _), (_, i1, ke, _) = meta[row.coeffs[0][0]], meta[row.coeffs[3][0]]
                self.handoff_out_pairs[ke].add((i1, i2))
            elif fam == "handoff_in":
                (_, i2, ko, _), (_, i1, ke, _) = meta[row.coeffs[0][0]], meta[row.coeffs[3][0]]
                if ke - ko == 1:
                    self.handoff_in_pairs[ke].add((i1, i2))
                else:
                    self.handoff_in2_pairs[ke].add((i1, i2))
            elif fam == "lon_swap":
                (_, i1, k, _), (_, i2, _, _) = meta[row.coeffs[0][0]], meta[row.coeffs[3][0]]
                self.lon_swap_pairs[k + 1].add((min(i1, i2), max(i1, i2)))
            elif fam == "hv_overlap":
                (_, i, k, p), (_, _, _, q) = meta[row.coeffs[0][0]], meta[row.coeffs[1][0]]
                self.hv_ban[i][k].add((p, q))
            elif fam == "space_col":
                _, i, k, q = meta[row.coeffs[0][0]]
                if self.forced_col[i][k] not in (None, q):
                    raise InfeasibleError(
                        f"CAV {i} pinned to two lanes at step {k}", family="space_col")
                self.forced_col[i][k] = q
            elif fam == "space_band":
                _, i, k, _ = meta[row.coeffs[0][0]]
                ps = {meta[v][3] for v, _ in row.coeffs}
                cur = self.allowed_rows[i][k]
                self.allowed_rows[i][k] = ps if cur is None else cur & ps
            else:
                raise InfeasibleError(f"unknown constraint family {fam!r}", family=fam)
        for i in range(n):
            if self.init_row[i] is None or self.init_col[i] is None:
                raise InfeasibleError(f"CAV {i} has no initial cell", family="initial")

    def stage_cost(self, i: int, k: int, p: int, q: int) -> float:
        obj = self.prog.objective
        return obj[self.prog.var_r(i, k, p)] + obj[self.prog.var_c(i, k, q)]

    def move_cost(self, i: int, k: int, p0: int, q0: int, p1: int, q1: int) -> float:
        obj = self.prog.objective
        cost = 0.0
        if p0 != p1:
            cost += obj[self.prog.var_dr(i, k, p0)] + obj[self.prog.var_dr(i, k, p1)]
        if q0 != q1:
            cost += obj[self.prog.var_dc(i, k, q0)] + obj[self.prog.var_dc(i, k, q1)]
        return cost

    def successors(self, i: int, k: int, p0: int, q0: int):
        """Feasible (p, q, edge_cost) one CAV may occupy at step k+1, with the
        reason every successor vanished when none survive."""
        R, C = self.prog.n_rows, self.prog.n_cols
        out = []
        reason = "row_jump"
        rows = [p for p in range(1, R + 1) if (p0, p) not in self.banned_rt[i][k]]
        cols = [q for q in range(1, C + 1) if (q0, q) not in self.banned_ct[i][k]]
        if rows and cols:
            reason = "space_band"
            allowed = self.allowed_rows[i][k + 1]
            if allowed is not None:
                rows = [p for p in rows if p in allowed]
            forced = self.forced_col[i][k + 1]
            if forced is not None:
                cols = [q for q in cols if q == forced]
            if rows and cols:
                reason = "hv_overlap"
                corner = self.corner[i][k]
                ban = self.hv_ban[i][k + 1]
                for p in rows:
                    for q in cols:
                        if (p0, p, q0, q) in corner:
                            reason = "corner"
                            continue
                        if (p, q) in ban:
                            continue
                        out.append((p, q, self.move_cost(i, k, p0, q0, p, q)
                                    + self.stage_cost(i, k + 1, p, q)))
        return out, (None if out else reason)


def _cost_to_go(dec: _Decoded, succ_cache: dict) -> list[list[dict]]:
    """Single-vehicle optimal cost-to-go per CAV, state, and step (admissible bound)."""
    prog = dec.prog
    n, N = prog.n_cav, prog.n_steps
    table: list[list[dict]] = []
    for i in range(n):
        per_step = [dict() for _ in range(N)]
        R, C = prog.n_rows, prog.n_cols
        for p in range(1, R + 1):
            for q in range(1, C + 1):
                per_step[N - 1][(p, q)] = 0.0
        for k in range(N - 2, -1, -1):
            for p in range(1, R + 1):
                for q in range(1, C + 1):
                    succ, _ = dec.successors(i, k, p, q)
                    succ_cache[(i, k, p, q)] = succ
                    best = INF
                    for (p1, q1, cost) in succ:
                        total = cost + per_step[k + 1][(p1, q1)]
                        if total < best:
                            best = total
                    per_step[k][(p, q)] = best
        table.append(per_step)
    return table


def solve(prog: BinaryProgram, limits: SolveLimits = SolveLimits(),
          stats: SolveStats | None = None) -> OccupancyPlan:
    """Provably optimal plan for the program, or a typed failure.

    Raises InfeasibleError naming the first blocking constraint family when
    no assignment exists, and BudgetError when the node or time budget runs
    out (a suboptimal incumbent is never returned silently).
    """
    dec = _Decoded(prog)
    n, N = prog.n_cav, prog.n_steps
    succ_cache: dict = {}
    togo = _cost_to_go(dec, succ_cache)

    cells = [[None] * N for _ in range(n)]
    start_cost = 0.0
    rest = 0.0
    for i in range(n):
        p, q = dec.init_row[i], dec.init_col[i]
        cells[i][0] = (p, q)
        start_cost += dec.stage_cost(i, 0, p, q)
        future = togo[i][0][(p, q)]
        if future == INF:
            raise InfeasibleError(
                f"CAV {i} has no feasible cell sequence from ({p},{q})", family="motion")
        rest += future

    occupied: list[dict] = [dict() for _ in range(N)]
    for i in range(n):
        occupied[0][cells[i][0]] = i

    best_cost = INF
    best_cells = None
    first_block: list[str | None] = [None]
    node_count = [0]
    incumbents = [0]
    t_start = time.perf_counter()
    step_order: list[list[int] | None] = [None] * N

    def check_budget():
        if node_count[0] > limits.max_nodes:
            raise BudgetError(f"node budget {limits.max_nodes} exhausted")
        if limits.max_seconds is not None and node_count[0] % 1024 == 0:
            if time.perf_counter() - t_start > limits.max_seconds:
                raise BudgetError(f"time budget {limits.max_seconds}s exhausted")

    memo: dict = {}

    def dfs(k: int, pos: int, cost: float, rest_bound: float):
        nonlocal best_cost, best_cells
        if k == N:
            if cost < best_cost:
                best_cost = cost
                best_cells = [list(seq) for seq in cells]
                incumbents[0] += 1
            return
        if pos == 0:
            # completion cost depends only on the configuration, so a repeat
            # visit at equal or higher cost-to-come cannot improve anything
            key = (k, tuple(cells[j][k - 1] for j in range(n)))
            if memo.get(key, INF) <= cost:
                return
            if len(memo) < 4_000_000:
                memo[key] = cost
            # front vehicles choose first: followers then see vacated cells
            step_order[k] = sorted(range(n), key=lambda j: (-cells[j][k - 1][0],
                                                            cells[j][k - 1][1], j))
        order = step_order[k]
        i = order[pos]
        p0, q0 = cells[i][k - 1]
        succ = succ_cache[(i, k - 1, p0, q0)]
        if not succ:
            if first_block[0] is None:
                _, reason = dec.successors(i, k - 1, p0, q0)
                first_block[0] = reason
            return
        own_prev = togo[i][k - 1][(p0, q0)]
        pairs = dec.overlap_pairs[k]
        hand_out = dec.handoff_out_pairs[k]
        hand_in = dec.handoff_in_pairs[k]
        hand_in2 = dec.handoff_in2_pairs[k]
        swaps = dec.lon_swap_pairs[k]
        cand = []
        blocked_by = None
        for (p, q, edge) in succ:
            holder = occupied[k].get((p, q))
            if holder is not None and (min(holder, i), max(holder, i)) in pairs:
                blocked_by = blocked_by or "cav_overlap"
                continue
            bad = None
            if q != q0:
                prev_holder = occupied[k - 1].get((p, q))
                if (prev_holder is not None and prev_holder != i
                        and (i, prev_holder) in hand_in):
                    bad = "handoff_in"
                if bad is None and k >= 2 and hand_in2:
                    prev_holder = occupied[k - 2].get((p, q))
                    if (prev_holder is not None and prev_holder != i
                            and (i, prev_holder) in hand_in2):
                        bad = "handoff_in"
                if bad is None:
                    j2 = occupied[k].get((p0, q0))
                    if j2 is not None and (j2, i) in hand_out:
                        bad = "handoff_out"  # someone already drove into my cell
            if bad is None:
                j1 = occupied[k - 1].get((p, q))
                if j1 is not None and j1 != i and cells[j1][k] is not None:
                    pj, qj = cells[j1][k]
                    if (i, j1) in hand_out and qj != q:
                        bad = "handoff_out"
                    elif ((min(i, j1), max(i, j1)) in swaps and q == q0 and qj == q
                            and (pj, qj) == (p0, q0)):
                        bad = "lon_swap"
            if bad:
                blocked_by = blocked_by or bad
                continue
            cand.append((edge + togo[i][k][(p, q)], p, q, edge))
        if not cand:
            if first_block[0] is None:
                first_block[0] = blocked_by or "motion"
            return
        cand.sort()
        nk, npos = (k, pos + 1) if pos + 1 < n else (k + 1, 0)
        for (key, p, q, edge) in cand:
            node_count[0] += 1
            check_budget()
            bound = cost + edge + rest_bound - own_prev + togo[i][k][(p, q)]
            if bound >= best_cost:
                break  # candidates are sorted; later ones bound at least as high
            cells[i][k] = (p, q)
            occupied[k][(p, q)] = i
            dfs(nk, npos, cost + edge, rest_bound - own_prev + togo[i][k][(p, q)])
            del occupied[k][(p, q)]
            cells[i][k] = None

    dfs(1, 0, start_cost, rest)

    if stats is not None:
        stats.nodes = node_count[0]
        stats.incumbents = incumbents[0]
        stats.seconds = time.perf_counter() - t_start
    if best_cells is None:
        family = first_block[0] or "motion"
        raise InfeasibleError(
            f"maneuver program infeasible (first blocking family: {family})", family=family)
    plan = [[CellIndex(p, q) for (p, q) in seq] for seq in best_cells]
    return OccupancyPlan(cells=plan, n_steps=N, objective_value=best_cost)
