"""Closed-loop scenario runner and measures of effectiveness.

The swarming controller replans on the event triggers (plan exhausted or a
new HV inside the grid): rebuild the grid, forecast the HVs, solve the
maneuver program, regenerate trajectories, and re-solve the trackers.  The
baseline controller is a longitudinal-only constant-time-gap follower with no
overtaking capability.  HVs follow the IDM and keep their lane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .grid import CellIndex, GriddingInputs, MovingGrid, build_grid, default_lane_centers
from .planner import (BlockAssignment, InfeasibleError, OccupancyPlan, PlannerWeights,
                      build_program, compute_delta, compute_epsilon, should_replan)
from .solver import SolveLimits, SolveStats, solve
from .tracker import (LatState, LonState, TrackerParams, build_lat_problem,
                      build_lon_problem, clamp_controls, lqr_solve)
from .traffic import HvForecast, IdmParams, VehicleState, forecast_cells, idm_accel, step_hv
from .trajgen import build_reference_path, generate_waypoints


class SimulationError(RuntimeError):
    """A run aborted: planner infeasibility or a collision."""


@dataclass
class ScenarioConfig:
    # road
    lane_count: int = 3
    lane_width: float = 3.0
    # CAV platoon (index 0 is the tail, the last is the lead)
    cav_count: int = 6
    cav_initial_gap: float = 10.0       # net gap between platoon members [m]
    cav_speed: float = 20.0             # swarm cruising speed [m/s]
    platoon_lane: int = 2
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    min_safety_gap: float = 5.0         # collision-safety floor between CAVs [m]
    grid_safety_gap: float = 10.0       # gap folded into the cell length [m]
    # front HV to overtake
    front_hv_gap: float = 25.0          # net gap from the lead CAV to the front HV [m]
    front_hv_speed: float = 17.5
    # side-lane traffic: one lane leader per side plus upstream followers
    side_lanes: tuple[int, ...] = (1, 3)
    side_lead_s: tuple[float, ...] = (20.0, 35.0)   # lane leader positions, tail CAV at 0
    side_speed: float = 17.5
    upstream_count: int = 5
    upstream_gap: float = 25.0          # initial front-to-front spacing [m]
    # controller
    controller: str = "swarming"        # or "baseline-cacc"
    w_tar: float = 10.0
    w_lon: float = 0.5
    w_lat: float = 2.0
    cruise_w_tar: float = 0.0           # progress weight for formation-hold episodes
    horizon: int = 19                   # behavior steps per episode, start included
    dt_b: float = 3.0                   # behavior step [s]
    blocking_window: int = 5            # steps a detected HV keeps its blocker pinned
    overtake_lookahead: float = 200.0   # impeding HV search range ahead of the lead [m]
    solver_max_nodes: int = 100_000_000
    # tracker
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
    # baseline CACC follower
    cacc_gap: float = 10.0              # desired net gap at standstill [m]
    cacc_headway: float = 0.3
    cacc_kp: float = 0.12
    cacc_kv: float = 0.8
    cacc_range: float = 150.0           # following-sensor range; cruise beyond it [m]
    cacc_k_free: float = 0.5
    # IDM background traffic; the front HV and the lane leaders always desire
    # the speed they already drive (they are the slow-moving vehicles)
    idm_v0: float = 17.5
    idm_T: float = 1.2
    idm_a_max: float = 1.4
    idm_b: float = 2.0
    idm_s0: float = 2.0
    idm_delta: float = 4.0
    # run
    duration: float = 150.0
    upstream_window: float | None = 15.0  # upstream-impact averaging span after the
                                          # maneuver starts (the space-making phase)
    seed: int = 0
    travel_segment: tuple[float, float] | None = None

    def __post_init__(self):
        if self.duration < self.horizon * self.dt_b:
            raise ValueError("duration must cover at least one planning horizon")
        for name in ("lane_width", "cav_speed", "dt", "dt_b", "ds", "duration",
                     "vehicle_length", "front_hv_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.controller not in ("swarming", "baseline-cacc"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if not 1 <= self.platoon_lane <= self.lane_count:
            raise ValueError("platoon lane outside the road")

    @property
    def l_cell(self) -> float:
        return self.vehicle_length + self.grid_safety_gap

    @property
    def lane_y(self) -> tuple[float, ...]:
        return default_lane_centers(self.lane_count, self.lane_width)

    def idm_params(self, v0: float | None = None) -> IdmParams:
        return IdmParams(v0=v0 if v0 is not None else self.idm_v0, T=self.idm_T,
                         a_max=self.idm_a_max, b=self.idm_b, s0_jam=self.idm_s0,
                         delta_exp=self.idm_delta, length=self.vehicle_length)

    def idm_for(self, hv_id: str) -> IdmParams:
        # the front HV and the lane leaders are the slow-moving vehicles; their
        # desired speed is the speed they already drive
        if hv_id == "hv_front":
            return self.idm_params(self.front_hv_speed)
        if hv_id.endswith("_lead"):
            return self.idm_params(self.side_speed)
        return self.idm_params()

    def tracker_params(self) -> TrackerParams:
        return TrackerParams(dt=self.dt, ds=self.ds, q_s=self.q_s, q_v=self.q_v,
                             r_lon=self.r_lon, q_l=self.q_l, q_phi=self.q_phi,
                             r_lat=self.r_lat, a_min=self.a_min, a_max=self.a_max,
                             v_min=self.v_min, v_max=self.v_max,
                             steer_limit=self.steer_limit, wheelbase=self.wheelbase)

    def segment(self) -> tuple[float, float]:
        if self.travel_segment is not None:
            return self.travel_segment
        lead = (self.cav_count - 1) * (self.vehicle_length + self.cav_initial_gap)
        return (lead + 50.0, lead + 1550.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("side_lanes", "side_lead_s", "travel_segment"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        kwargs = dict(data)
        for key in ("side_lanes", "side_lead_s", "travel_segment"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class TickRecord:
    t: float
    vehicles: list[tuple]   # (id, kind, s, y, v, a)


@dataclass
class EpisodeRecord:
    index: int
    t_start: float
    trigger: str            # "initial" | "plan_exhausted" | "new_hv"
    mode: str               # "overtaking" | "cruising"
    delta: int
    plan: OccupancyPlan
    blocking: list[BlockAssignment]
    objective: float
    solver_nodes: int
    grid_rows: int
    grid_cols: int
    complete_step: int | None = None
    grid: MovingGrid | None = None
    forecast: HvForecast | None = None
    init_cells: list[CellIndex] | None = None

    def summary(self) -> dict:
        return {
            "index": self.index, "t_start": self.t_start, "trigger": self.trigger,
            "mode": self.mode, "delta": self.delta, "objective": self.objective,
            "solver_nodes": self.solver_nodes,
            "complete_step": self.complete_step,
            "grid": [self.grid_rows, self.grid_cols],
            "blocking": [{"cav": b.cav, "hv": b.hv, "col": b.col,
                          "rows": [b.row_lo, b.row_hi]} for b in self.blocking],
            "plan": json.loads(self.plan.to_json()),
        }


@dataclass
class SimLog:
    mode: str
    dt: float
    lane_y: tuple[float, ...]
    ticks: list[TickRecord] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    collisions: list[tuple[float, str, str]] = field(default_factory=list)
    controls: list[tuple] = field(default_factory=list)  # (id, t, a, steer, s, y, v, phi)

    def vehicle_series(self, vid: str) -> dict[str, np.ndarray]:
        ts, ss, ys, vs = [], [], [], []
        for rec in self.ticks:
            for (i, _, s, y, v, _) in rec.vehicles:
                if i == vid:
                    ts.append(rec.t); ss.append(s); ys.append(y); vs.append(v)
                    break
        return {"t": np.array(ts), "s": np.array(ss), "y": np.array(ys), "v": np.array(vs)}

    def vehicle_ids(self) -> list[str]:
        return [v[0] for v in self.ticks[0].vehicles] if self.ticks else []


def lane_of(y: float, lane_y: tuple[float, ...]) -> int:
    return min(range(len(lane_y)), key=lambda i: abs(lane_y[i] - y)) + 1


def build_initial_world(cfg: ScenarioConfig, include_cavs: bool = True
                        ) -> tuple[list[VehicleState], list[VehicleState]]:
    lane_y = cfg.lane_y
    spacing = cfg.vehicle_length + cfg.cav_initial_gap
    cavs = []
    if include_cavs:
        y = lane_y[cfg.platoon_lane - 1]
        for i in range(cfg.cav_count):
            cavs.append(VehicleState(id=f"cav{i}", kind="CAV", s=i * spacing, y=y,
                                     v=cfg.cav_speed, lane=cfg.platoon_lane))
    hvs = []
    lead_s = (cfg.cav_count - 1) * spacing
    front_s = lead_s + cfg.vehicle_length + cfg.front_hv_gap
    hvs.append(VehicleState(id="hv_front", kind="HV", s=front_s,
                            y=lane_y[cfg.platoon_lane - 1], v=cfg.front_hv_speed,
                            lane=cfg.platoon_lane))
    for lane, lead in zip(cfg.side_lanes, cfg.side_lead_s):
        y = lane_y[lane - 1]
        hvs.append(VehicleState(id=f"hv_l{lane}_lead", kind="HV", s=lead, y=y,
                                v=cfg.side_speed, lane=lane))
        for j in range(1, cfg.upstream_count + 1):
            hvs.append(VehicleState(id=f"hv_l{lane}_f{j}", kind="HV",
                                    s=lead - j * cfg.upstream_gap, y=y,
                                    v=cfg.side_speed, lane=lane))
    return cavs, hvs


def advance_cav(state: VehicleState, accel: float, dt: float) -> VehicleState:
    """Forward-Euler advance matching the tracker's longitudinal model."""
    out = state.copy()
    out.s = state.s + state.v * dt
    out.v = state.v + accel * dt
    out.a = accel
    return out


def find_collisions(vehicles: list[VehicleState], length: float, width: float
                    ) -> list[tuple[str, str]]:
    """Axis-aligned footprint overlaps, centers at s - length/2."""
    order = sorted(range(len(vehicles)), key=lambda i: vehicles[i].s)
    hits = []
    for a in range(len(order)):
        va = vehicles[order[a]]
        for b in range(a + 1, len(order)):
            vb = vehicles[order[b]]
            if vb.s - va.s >= length:
                break
            if abs(vb.y - va.y) < width:
                hits.append((va.id, vb.id))
    return hits


def step_tick(world: list[VehicleState], cav_states: dict[str, VehicleState],
              hv_accels: dict[str, float], dt: float,
              length: float = 5.0, width: float = 2.0
              ) -> tuple[list[VehicleState], list[tuple[str, str]]]:
    """Advance every vehicle one tick and collision-check the new states.

    CAVs take their externally computed states (tracker or follower output);
    HVs integrate the supplied IDM accelerations.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = []
    for veh in world:
        if veh.id in cav_states:
            out.append(cav_states[veh.id])
        elif veh.kind == "HV":
            out.append(step_hv(veh, hv_accels.get(veh.id, 0.0), dt))
        else:
            out.append(veh.copy())
    return out, find_collisions(out, length, width)


def _idm_leader(ego: VehicleState, world: list[VehicleState]) -> VehicleState | None:
    best = None
    for other in world:
        if other.id == ego.id or other.lane != ego.lane or other.s <= ego.s:
            continue
        if best is None or other.s < best.s:
            best = other
    return best


@dataclass
class _EpisodeExec:
    record: EpisodeRecord
    grid: MovingGrid
    plan_len: int                 # transitions in the plan
    ticks_per_step: int
    hv_in_grid: frozenset[str]
    refs: list
    lon_sol: list                 # per-CAV LqrSolution with feedback gains
    lat_sol: list
    sigma: list[float]
    lat: list[tuple[float, float]]        # (l, phi) per CAV
    lat_sigma0: list[float]
    executed: int = 0
    tick_in_episode: int = 0


def _grid_inputs(cfg: ScenarioConfig, cavs: list[VehicleState],
                 hvs: list[VehicleState], t: float) -> tuple[GriddingInputs, str, VehicleState | None]:
    lead = max(cavs, key=lambda c: c.s)
    tail = min(cavs, key=lambda c: c.s)
    anchor = tail.s - cfg.l_cell / 2  # mid-cell anchor keeps cell edges off vehicle noses
    impeding = None
    for hv in hvs:
        if hv.lane != cfg.platoon_lane or hv.s <= lead.s:
            continue
        if hv.s - lead.s > cfg.overtake_lookahead or hv.v >= cfg.cav_speed - 0.5:
            continue
        if impeding is None or hv.s < impeding.s:
            impeding = hv
    if impeding is not None:
        mode = "overtaking"
        inputs = GriddingInputs(tail_cav_s=anchor, lane_count=cfg.lane_count,
                                cav_count=cfg.cav_count, front_hv_s=impeding.s,
                                front_hv_v=impeding.v, l_cav=cfg.vehicle_length,
                                d_safe=cfg.grid_safety_gap, mode=mode,
                                v_cruise_default=cfg.cav_speed,
                                lane_width=cfg.lane_width, lane_y=cfg.lane_y, t0=t)
    else:
        mode = "cruising"
        inputs = GriddingInputs(tail_cav_s=anchor, lane_count=cfg.lane_count,
                                cav_count=cfg.cav_count, front_hv_s=lead.s,
                                front_hv_v=cfg.cav_speed, l_cav=cfg.vehicle_length,
                                d_safe=cfg.grid_safety_gap, mode=mode,
                                v_cruise_default=cfg.cav_speed,
                                lane_width=cfg.lane_width, lane_y=cfg.lane_y, t0=t)
    return inputs, mode, impeding


def _init_cells(cfg: ScenarioConfig, grid: MovingGrid, cavs: list[VehicleState],
                t: float) -> list[CellIndex]:
    """Current CAV cells, de-duplicated upward within each column."""
    cells: list[CellIndex] = []
    for cav in cavs:
        rel = cav.s - grid.origin_at(t)
        row = min(max(math.floor(rel / grid.l_cell) + 1, 1), grid.n_rows)
        col = lane_of(cav.y, grid.lane_y)
        cells.append(CellIndex(row, col))
    for col in set(c.col for c in cells):
        members = sorted((i for i, c in enumerate(cells) if c.col == col),
                         key=lambda i: cavs[i].s)
        last = 0
        for i in members:
            row = max(cells[i].row, last + 1)
            cells[i] = CellIndex(row, col)
            last = row
    return cells


def _hv_in_grid(hvs: list[VehicleState], grid: MovingGrid, t: float) -> frozenset[str]:
    ids = []
    span = grid.n_rows * grid.l_cell
    for hv in hvs:
        rel = hv.s - grid.origin_at(t)
        if 0 <= rel < span:
            ids.append(hv.id)
    return frozenset(ids)


def _start_episode(cfg: ScenarioConfig, cavs: list[VehicleState], hvs: list[VehicleState],
                   t: float, index: int, trigger: str) -> _EpisodeExec:
    inputs, mode, _ = _grid_inputs(cfg, cavs, hvs, t)
    grid = build_grid(inputs)
    init_cells = _init_cells(cfg, grid, cavs, t)
    forecast = forecast_cells(hvs, grid, cfg.horizon, cfg.dt_b,
                              platoon_lane=cfg.platoon_lane,
                              detect_window=cfg.blocking_window)
    delta = 0
    if forecast.front_hv_index is not None and mode == "overtaking":
        delta = compute_delta(init_cells, forecast, grid, cfg.platoon_lane)
    weights = PlannerWeights(w_tar=cfg.w_tar if mode == "overtaking" else cfg.cruise_w_tar,
                             w_lon=cfg.w_lon, w_lat=cfg.w_lat,
                             l_index=cfg.platoon_lane, delta=delta)
    program = build_program(grid, init_cells, forecast, weights, cfg.horizon)
    stats = SolveStats()
    try:
        plan = solve(program, SolveLimits(max_nodes=cfg.solver_max_nodes), stats)
    except InfeasibleError as err:
        raise SimulationError(f"planner infeasible at t={t:.2f}s: {err}") from err

    blocking: list[BlockAssignment] = []
    seen = set()
    for k in range(cfg.horizon - 1):
        _, duties = compute_epsilon(forecast, k, init_cells)
        for d in duties:
            if (d.cav, d.hv) not in seen:
                seen.add((d.cav, d.hv))
                blocking.append(d)

    complete_step = None
    if forecast.front_hv_index is not None:
        front = forecast.cells[forecast.front_hv_index][0]
        if front is not None:
            rc = plan.rows_cols()
            complete_step = next(
                (k for k in range(plan.n_steps)
                 if all(seq[k][0] > front.row and seq[k][1] == cfg.platoon_lane
                        for seq in rc)), None)

    record = EpisodeRecord(index=index, t_start=t, trigger=trigger, mode=mode,
                           delta=delta, plan=plan, blocking=blocking,
                           objective=plan.objective_value, solver_nodes=stats.nodes,
                           grid_rows=grid.n_rows, grid_cols=grid.n_cols,
                           complete_step=complete_step, grid=grid,
                           forecast=forecast, init_cells=init_cells)

    params = cfg.tracker_params()
    ticks_per_step = round(cfg.dt_b / cfg.dt)
    plan_len = cfg.horizon - 1
    refs, lon_sols, lat_sols, sigmas, lats, lat_s0 = [], [], [], [], [], []
    for i, cav in enumerate(cavs):
        wps = generate_waypoints(plan.rows_cols()[i], grid, cfg.dt_b)
        ref = build_reference_path(wps, ds=cfg.ds)
        sigma0 = ref.sigma_of_x(cav.s)
        lon = build_lon_problem(LonState(s=sigma0, v=cav.v), ref, params,
                                horizon=plan_len * ticks_per_step, t0=t)
        lon_sol = clamp_controls(lqr_solve(lon), lon)
        l0 = cav.y - ref.y_of_sigma(sigma0)
        phi0 = cav.heading - ref.heading_of_sigma(sigma0)
        k_lat = max(int(math.ceil((ref.length - sigma0) / cfg.ds)), 1)
        lat = build_lat_problem(LatState(l=l0, phi=phi0), ref, params,
                                horizon=k_lat, sigma0=sigma0)
        lat_sol = clamp_controls(lqr_solve(lat), lat)
        refs.append(ref)
        lon_sols.append(lon_sol)
        lat_sols.append(lat_sol)
        sigmas.append(sigma0)
        lats.append((l0, phi0))
        lat_s0.append(sigma0)
    return _EpisodeExec(record=record, grid=grid, plan_len=plan_len,
                        ticks_per_step=ticks_per_step,
                        hv_in_grid=_hv_in_grid(hvs, grid, t),
                        refs=refs, lon_sol=lon_sols, lat_sol=lat_sols, sigma=sigmas,
                        lat=lats, lat_sigma0=lat_s0)


def _track_cav_tick(cfg: ScenarioConfig, ep: _EpisodeExec, i: int,
                    cav: VehicleState) -> tuple[VehicleState, float, float]:
    """One tick of closed-loop tracking: evaluate the backward-pass feedback
    law at the executed state, clamp, and integrate the path-frame models."""
    ref = ep.refs[i]
    sigma = ep.sigma[i]
    l, phi = ep.lat[i]
    k = ep.tick_in_episode
    a = float(ep.lon_sol[i].policy(k, np.array([sigma, cav.v]))[0])
    a = min(max(a, cfg.a_min), cfg.a_max)
    v_next = cav.v + a * cfg.dt
    if v_next > cfg.v_max:
        a = (cfg.v_max - cav.v) / cfg.dt
    elif v_next < cfg.v_min:
        a = (cfg.v_min - cav.v) / cfg.dt
    a = min(max(a, cfg.a_min), cfg.a_max)
    j = int((sigma - ep.lat_sigma0[i]) // cfg.ds)
    steer = float(ep.lat_sol[i].policy(j, np.array([l, phi]))[0])
    steer = min(max(steer, -cfg.steer_limit), cfg.steer_limit)
    sigma_new = sigma + cav.v * cfg.dt
    v_new = cav.v + a * cfg.dt
    dsig = sigma_new - sigma
    kappa = ref.kappa_of_sigma(sigma)
    l_new = l + dsig * phi
    phi_new = phi + dsig * (steer / cfg.wheelbase - kappa)
    ep.sigma[i] = sigma_new
    ep.lat[i] = (l_new, phi_new)
    out = cav.copy()
    out.s = ref.x_of_sigma(sigma_new)
    out.y = ref.y_of_sigma(sigma_new) + l_new
    out.v = v_new
    out.a = a
    out.heading = ref.heading_of_sigma(sigma_new) + phi_new
    out.lane = lane_of(out.y, cfg.lane_y)
    return out, a, steer


def _cacc_accel(cfg: ScenarioConfig, ego: VehicleState, leader: VehicleState | None) -> float:
    if leader is not None and leader.s - ego.s > cfg.cacc_range:
        leader = None
    if leader is None:
        a = cfg.cacc_k_free * (cfg.cav_speed - ego.v)
    else:
        net_gap = leader.s - ego.s - cfg.vehicle_length
        target = cfg.cacc_gap + cfg.cacc_headway * ego.v
        a = cfg.cacc_kp * (net_gap - target) + cfg.cacc_kv * (leader.v - ego.v)
    a = min(max(a, cfg.a_min), cfg.a_max)
    v_next = ego.v + a * cfg.dt
    if v_next > cfg.v_max:
        a = (cfg.v_max - ego.v) / cfg.dt
    elif v_next < cfg.v_min:
        a = (cfg.v_min - ego.v) / cfg.dt
    return min(max(a, cfg.a_min), cfg.a_max)


def run_scenario(cfg: ScenarioConfig, include_cavs: bool = True) -> SimLog:
    """Deterministic closed-loop run; aborts with SimulationError on collision
    or planner infeasibility."""
    cavs, hvs = build_initial_world(cfg, include_cavs=include_cavs)
    mode = cfg.controller if include_cavs else "hv-only"
    log = SimLog(mode=mode, dt=cfg.dt, lane_y=cfg.lane_y)
    idm_by_id = {hv.id: cfg.idm_for(hv.id) for hv in hvs}
    total_ticks = round(cfg.duration / cfg.dt)
    swarming = include_cavs and cfg.controller == "swarming"

    episode: _EpisodeExec | None = None
    next_trigger = "initial"
    episode_index = 0
    t = 0.0

    def log_tick(tt: float):
        log.ticks.append(TickRecord(t=tt, vehicles=[
            (v.id, v.kind, v.s, v.y, v.v, v.a) for v in cavs + hvs]))

    log_tick(0.0)
    for tick in range(total_ticks):
        if swarming and episode is None:
            episode = _start_episode(cfg, cavs, hvs, t, episode_index, next_trigger)
            log.episodes.append(episode.record)
            episode_index += 1

        world = cavs + hvs
        hv_accels = {}
        for hv in hvs:
            leader = _idm_leader(hv, world)
            hv_accels[hv.id] = idm_accel(hv, leader, idm_by_id[hv.id], (cfg.a_min, cfg.a_max))
        cav_states: dict[str, VehicleState] = {}
        if include_cavs:
            if swarming:
                for i, cav in enumerate(cavs):
                    new_state, a, steer = _track_cav_tick(cfg, episode, i, cav)
                    cav_states[cav.id] = new_state
                    log.controls.append((cav.id, t, a, steer, new_state.s,
                                         new_state.y, new_state.v, episode.lat[i][1]))
            else:
                for cav in cavs:
                    leader = _idm_leader(cav, world)
                    a = _cacc_accel(cfg, cav, leader)
                    new_state = advance_cav(cav, a, cfg.dt)
                    new_state.lane = lane_of(new_state.y, cfg.lane_y)
                    cav_states[cav.id] = new_state
                    log.controls.append((cav.id, t, a, 0.0, new_state.s,
                                         new_state.y, new_state.v, 0.0))
        new_world, hits = step_tick(world, cav_states, hv_accels, cfg.dt,
                                    cfg.vehicle_length, cfg.vehicle_width)
        cavs = new_world[:len(cavs)]
        hvs = new_world[len(cavs):]
        t = (tick + 1) * cfg.dt
        log_tick(t)
        if hits:
            for (a_id, b_id) in hits:
                log.collisions.append((t, a_id, b_id))
            raise SimulationError(
                f"collision between {hits[0][0]} and {hits[0][1]} at t={t:.2f}s")

        if swarming:
            episode.tick_in_episode += 1
            if episode.tick_in_episode % episode.ticks_per_step == 0:
                episode.executed += 1
                new_hv = bool(_hv_in_grid(hvs, episode.grid, t) - episode.hv_in_grid)
                if should_replan(episode.executed, episode.plan_len, new_hv):
                    next_trigger = "new_hv" if new_hv else "plan_exhausted"
                    episode = None
    return log


def run_hv_reference(cfg: ScenarioConfig) -> SimLog:
    """The same traffic with no CAVs: the unimpeded upstream baseline."""
    return run_scenario(cfg, include_cavs=False)


@dataclass
class MOEReport:
    platoon_speed_avg: float
    platoon_speed_min: float
    platoon_speed_max: float
    platoon_speed_var: float
    per_cav_speed: dict
    travel_time_avg: float | None
    per_cav_travel_time: dict
    following_avg: float | None
    following_min: float | None
    per_cav_following: dict
    upstream_reduction_by_lane: dict
    upstream_reduction: list[float]
    upstream_min_gap: float | None
    upstream_min_gap_speed: float | None
    upstream_min_gap_headway: float | None
    collisions: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _series_matrix(log: SimLog, ids: list[str]) -> dict[str, dict[str, np.ndarray]]:
    t = np.array([rec.t for rec in log.ticks])
    out = {vid: {"t": t} for vid in ids}
    idx = {vid: n for n, vid in enumerate(log.vehicle_ids()) if vid in ids}
    for vid in ids:
        n = idx[vid]
        out[vid]["s"] = np.array([rec.vehicles[n][2] for rec in log.ticks])
        out[vid]["y"] = np.array([rec.vehicles[n][3] for rec in log.ticks])
        out[vid]["v"] = np.array([rec.vehicles[n][4] for rec in log.ticks])
    return out


def _crossing_time(t: np.ndarray, s: np.ndarray, target: float) -> float | None:
    hit = np.argmax(s >= target)
    if s[hit] < target:
        return None
    if hit == 0:
        return float(t[0])
    frac = (target - s[hit - 1]) / (s[hit] - s[hit - 1])
    return float(t[hit - 1] + frac * (t[hit] - t[hit - 1]))


def compute_moes(log: SimLog, reference_log: SimLog | None = None,
                 cfg: ScenarioConfig | None = None) -> MOEReport:
    """Mobility, safety, and upstream-impact measures from a finished run."""
    cfg = cfg if cfg is not None else ScenarioConfig()
    ids = log.vehicle_ids()
    cav_ids = [i for i in ids if i.startswith("cav")]
    series = _series_matrix(log, ids)
    per_cav_speed = {}
    all_speeds = []
    for vid in cav_ids:
        v = series[vid]["v"]
        per_cav_speed[vid] = {"avg": float(v.mean()), "min": float(v.min()),
                              "max": float(v.max()), "var": float(v.var())}
        all_speeds.append(v)
    if all_speeds:
        stack = np.concatenate(all_speeds)
        speed_avg, speed_min = float(stack.mean()), float(stack.min())
        speed_max, speed_var = float(stack.max()), float(stack.var())
    else:
        speed_avg = speed_min = speed_max = speed_var = 0.0

    seg_a, seg_b = cfg.segment()
    per_tt = {}
    for vid in cav_ids:
        ta = _crossing_time(series[vid]["t"], series[vid]["s"], seg_a)
        tb = _crossing_time(series[vid]["t"], series[vid]["s"], seg_b)
        per_tt[vid] = None if ta is None or tb is None else tb - ta
    valid_tt = [v for v in per_tt.values() if v is not None]
    tt_avg = float(np.mean(valid_tt)) if len(valid_tt) == len(cav_ids) and valid_tt else None

    # following distance: front-to-front to the nearest same-lane CAV ahead
    per_follow = {vid: [] for vid in cav_ids}
    if cav_ids:
        lanes = {vid: np.array([lane_of(y, log.lane_y) for y in series[vid]["y"]])
                 for vid in cav_ids}
        n_ticks = len(log.ticks)
        for n in range(n_ticks):
            for vid in cav_ids:
                best = None
                for other in cav_ids:
                    if other == vid or lanes[other][n] != lanes[vid][n]:
                        continue
                    gap = series[other]["s"][n] - series[vid]["s"][n]
                    if gap > 0 and (best is None or gap < best):
                        best = gap
                if best is not None:
                    per_follow[vid].append(best)
    follow_stats = {vid: {"avg": float(np.mean(d)), "min": float(np.min(d))}
                    for vid, d in per_follow.items() if d}
    all_follow = [g for d in per_follow.values() for g in d]
    follow_avg = float(np.mean(all_follow)) if all_follow else None
    follow_min = float(np.min(all_follow)) if all_follow else None

    # upstream impact versus the HV-only reference, averaged over the window
    # of the maneuver that causes the disturbance (the first planning episode);
    # over a whole long run the displacement loss propagates fully and every
    # follower's average would flatten to the same value
    reduction_by_lane: dict[str, list[float]] = {}
    combined: list[float] = []
    min_gap = min_gap_speed = min_gap_headway = None
    hv_ids = [i for i in ids if i.startswith("hv_l")]
    if hv_ids:
        t_arr = np.array([rec.t for rec in log.ticks])
        if log.episodes and cfg.upstream_window is not None:
            w_end = log.episodes[0].t_start + cfg.upstream_window
        else:
            w_end = float(t_arr[-1])
        window = t_arr <= w_end
        chains: dict[int, list[str]] = {}
        for lane in sorted(set(int(i.split("_")[1][1:]) for i in hv_ids)):
            chain = [f"hv_l{lane}_lead"] + [f"hv_l{lane}_f{j}" for j in range(1, cfg.upstream_count + 1)]
            chains[lane] = [c for c in chain if c in ids]
        if reference_log is not None:
            ref_series = _series_matrix(reference_log, [i for i in reference_log.vehicle_ids()
                                                        if i.startswith("hv_l")])
            ref_window = np.array([rec.t for rec in reference_log.ticks]) <= w_end
            for lane, chain in chains.items():
                reductions = []
                for vid in chain[1:]:
                    v_run = float(series[vid]["v"][window].mean())
                    v_ref = float(ref_series[vid]["v"][ref_window].mean())
                    reductions.append(100.0 * (1.0 - v_run / v_ref))
                reduction_by_lane[str(lane)] = reductions
            n_follow = min(len(r) for r in reduction_by_lane.values())
            combined = [float(np.mean([reduction_by_lane[l][j] for l in reduction_by_lane]))
                        for j in range(n_follow)]
        for lane, chain in chains.items():
            for ahead, behind in zip(chain[:-1], chain[1:]):
                gaps = series[ahead]["s"] - series[behind]["s"]
                n = int(np.argmin(gaps))
                if min_gap is None or gaps[n] < min_gap:
                    min_gap = float(gaps[n])
                    min_gap_speed = float(series[behind]["v"][n])
                    min_gap_headway = min_gap / max(min_gap_speed, 1e-6)

    return MOEReport(platoon_speed_avg=speed_avg, platoon_speed_min=speed_min,
                     platoon_speed_max=speed_max, platoon_speed_var=speed_var,
                     per_cav_speed=per_cav_speed, travel_time_avg=tt_avg,
                     per_cav_travel_time=per_tt, following_avg=follow_avg,
                     following_min=follow_min, per_cav_following=follow_stats,
                     upstream_reduction_by_lane=reduction_by_lane,
                     upstream_reduction=combined, upstream_min_gap=min_gap,
                     upstream_min_gap_speed=min_gap_speed,
                     upstream_min_gap_headway=min_gap_headway,
                     collisions=len(log.collisions))
