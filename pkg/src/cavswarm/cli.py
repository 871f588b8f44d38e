"""Command-line front end: run scenarios, plan episodes, validate plans, plot logs.

Subcommands:
  run      --config cfg.json --out dir --mode swarm|baseline|both
  plan     --config cfg.json [--horizon N] [--out dir]
  plot     --log trajectories.csv --out dir [--config cfg.json]
  validate --plan plan.json --config cfg.json

CAVSWARM_LOG sets the log level (debug/info/warning).  All emitted CSV/JSON
is deterministic: repr floats, sorted JSON keys, LF line endings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .grid import build_grid
from .planner import InfeasibleError, OccupancyPlan, PlannerWeights, build_program, \
    compute_delta, validate_plan
from .sim import (MOEReport, ScenarioConfig, SimLog, SimulationError, _grid_inputs,
                  _init_cells, build_initial_world, compute_moes, run_hv_reference,
                  run_scenario)
from .solver import SolveLimits, solve
from .svgplot import line_chart
from .traffic import forecast_cells
from .trajgen import build_reference_path, generate_waypoints

log = logging.getLogger("cavswarm")


def write_trajectories_csv(simlog: SimLog) -> str:
    lines = ["vehicle_id,kind,t,s,y,v,a"]
    for rec in simlog.ticks:
        for (vid, kind, s, y, v, a) in rec.vehicles:
            lines.append(f"{vid},{kind},{rec.t!r},{s!r},{y!r},{v!r},{a!r}")
    return "\n".join(lines) + "\n"


def parse_trajectories(text: str) -> dict[str, dict[str, list]]:
    lines = [ln for ln in text.split("\n") if ln]
    header = lines[0].split(",")
    if header != ["vehicle_id", "kind", "t", "s", "y", "v", "a"]:
        raise ValueError(f"unexpected trajectory header: {lines[0]!r}")
    out: dict[str, dict[str, list]] = {}
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValueError(f"malformed trajectory row at line {n}: {ln!r}")
        vid, kind = parts[0], parts[1]
        rec = out.setdefault(vid, {"kind": kind, "t": [], "s": [], "y": [], "v": [], "a": []})
        for key, raw in zip(("t", "s", "y", "v", "a"), parts[2:]):
            rec[key].append(float(raw))
    return out


def write_controls_csv(simlog: SimLog) -> str:
    lines = ["cav_id,t,a_cmd,delta_cmd"]
    for (vid, t, a, steer, *_rest) in simlog.controls:
        lines.append(f"{vid},{t!r},{a!r},{steer!r}")
    return "\n".join(lines) + "\n"


def write_tracking_csv(simlog: SimLog) -> str:
    lines = ["cav_id,t,a_cmd,delta_cmd,s,y,v,phi"]
    for (vid, t, a, steer, s, y, v, phi) in simlog.controls:
        lines.append(f"{vid},{t!r},{a!r},{steer!r},{s!r},{y!r},{v!r},{phi!r}")
    return "\n".join(lines) + "\n"


def _episodes_json(simlog: SimLog) -> str:
    return json.dumps([ep.summary() for ep in simlog.episodes], indent=2, sort_keys=True)


def _load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ScenarioConfig.from_dict(json.load(fh))


def save_default_config(path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ScenarioConfig().to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, json.JSONDecodeError) as err:
        print(f"error: bad config: {err}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = {"swarm": ["swarming"], "baseline": ["baseline-cacc"],
             "both": ["swarming", "baseline-cacc"]}[args.mode]
    try:
        reference = run_hv_reference(cfg)
        results: dict[str, tuple[SimLog, MOEReport]] = {}
        for controller in modes:
            run_cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "controller": controller})
            simlog = run_scenario(run_cfg)
            results[controller] = (simlog, compute_moes(simlog, reference, run_cfg))
    except (SimulationError, InfeasibleError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    primary = results[modes[0]][0]
    (out / "trajectories.csv").write_text(write_trajectories_csv(primary), encoding="utf-8")
    (out / "controls.csv").write_text(write_controls_csv(primary), encoding="utf-8")
    (out / "tracking.csv").write_text(write_tracking_csv(primary), encoding="utf-8")
    (out / "episodes.json").write_text(_episodes_json(primary) + "\n", encoding="utf-8")
    if len(modes) > 1:
        other = results[modes[1]][0]
        (out / "trajectories_baseline.csv").write_text(write_trajectories_csv(other),
                                                       encoding="utf-8")
        (out / "controls_baseline.csv").write_text(write_controls_csv(other), encoding="utf-8")
    payload: dict = {}
    for controller, (_, moes) in results.items():
        key = "swarm" if controller == "swarming" else "baseline"
        payload[key] = moes.to_dict()
    if len(modes) > 1:
        swarm_avg = payload["swarm"]["platoon_speed_avg"]
        base_avg = payload["baseline"]["platoon_speed_avg"]
        payload["comparison"] = {
            "speed_uplift_pct": 100.0 * (swarm_avg / base_avg - 1.0),
            "swarm_avg_speed": swarm_avg,
            "baseline_avg_speed": base_avg,
        }
    (out / "moes.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    for controller, (_, moes) in results.items():
        label = "swarm" if controller == "swarming" else "baseline"
        print(f"{label}: platoon avg speed {moes.platoon_speed_avg:.3f} m/s, "
              f"min following {moes.following_min if moes.following_min is None else round(moes.following_min, 2)} m")
    if "comparison" in payload:
        print(f"speed uplift: {payload['comparison']['speed_uplift_pct']:.2f}%")
    return 0


def cmd_plan(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, json.JSONDecodeError) as err:
        print(f"error: bad config: {err}", file=sys.stderr)
        return 2
    horizon = args.horizon if args.horizon else cfg.horizon
    cavs, hvs = build_initial_world(cfg)
    inputs, mode, _ = _grid_inputs(cfg, cavs, hvs, 0.0)
    grid = build_grid(inputs)
    init_cells = _init_cells(cfg, grid, cavs, 0.0)
    if horizon < 2:
        plan = OccupancyPlan(cells=[[c] for c in init_cells], n_steps=1, objective_value=0.0)
    else:
        forecast = forecast_cells(hvs, grid, horizon, cfg.dt_b,
                                  platoon_lane=cfg.platoon_lane,
                                  detect_window=cfg.blocking_window)
        delta = 0
        if forecast.front_hv_index is not None and mode == "overtaking":
            delta = compute_delta(init_cells, forecast, grid, cfg.platoon_lane)
        weights = PlannerWeights(w_tar=cfg.w_tar if mode == "overtaking" else cfg.cruise_w_tar,
                                 w_lon=cfg.w_lon, w_lat=cfg.w_lat,
                                 l_index=cfg.platoon_lane, delta=delta)
        program = build_program(grid, init_cells, forecast, weights, horizon)
        try:
            plan = solve(program, SolveLimits(max_nodes=cfg.solver_max_nodes))
        except InfeasibleError as err:
            print(f"error: infeasible ({err.family}): {err}", file=sys.stderr)
            return 1
    header = "step " + " ".join(f"cav{i}".rjust(7) for i in range(len(plan.cells)))
    print(header)
    for k in range(plan.n_steps):
        row = f"{k:4d} " + " ".join(
            f"r{plan.cells[i][k].row:02d},c{plan.cells[i][k].col}".rjust(7)
            for i in range(len(plan.cells)))
        print(row)
    print(f"objective: {plan.objective_value!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(plan.to_json() + "\n", encoding="utf-8")
        print(f"wrote {out / 'plan.json'}")
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = _load_config(args.config)
        plan = OccupancyPlan.from_json(Path(args.plan).read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"error: malformed input: {err}", file=sys.stderr)
        return 2
    cavs, hvs = build_initial_world(cfg)
    inputs, _, _ = _grid_inputs(cfg, cavs, hvs, 0.0)
    grid = build_grid(inputs)
    init_cells = _init_cells(cfg, grid, cavs, 0.0)
    forecast = forecast_cells(hvs, grid, plan.n_steps, cfg.dt_b,
                              platoon_lane=cfg.platoon_lane,
                              detect_window=cfg.blocking_window)
    violations = validate_plan(plan, grid, forecast, init_cells)
    if not violations:
        print("plan is feasible: 0 violations")
        return 0
    for v in violations:
        print(f"violation[{v.family}] cav={v.cav} step={v.step}: {v.detail}")
    return 1


def _chart_csv(series: dict[str, tuple[list, list]], xname: str, yname: str) -> str:
    lines = [f"series,{xname},{yname}"]
    for label, (xs, ys) in series.items():
        for x, y in zip(xs, ys):
            lines.append(f"{label},{x!r},{y!r}")
    return "\n".join(lines) + "\n"


def cmd_plot(args) -> int:
    try:
        text = Path(args.log).read_text(encoding="utf-8")
    except FileNotFoundError:
        print(f"error: log file not found: {args.log}", file=sys.stderr)
        return 2
    try:
        data = parse_trajectories(text)
    except (ValueError, IndexError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if not data:
        print("error: log holds no vehicle rows", file=sys.stderr)
        return 2
    cfg = _load_config(args.config) if args.config else ScenarioConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cav_ids = sorted(v for v in data if data[v]["kind"] == "CAV")
    hv_ids = sorted(v for v in data if data[v]["kind"] == "HV")

    charts: dict[str, tuple[dict, str, str, str]] = {}
    if cav_ids:
        charts["cav_s_t"] = ({v: (data[v]["t"], data[v]["s"]) for v in cav_ids},
                             "CAV longitudinal trajectories", "t [s]", "s [m]")
        charts["cav_y_t"] = ({v: (data[v]["t"], data[v]["y"]) for v in cav_ids},
                             "CAV lateral trajectories", "t [s]", "y [m]")
        ts = data[cav_ids[0]]["t"]
        mean_v = [sum(data[v]["v"][n] for v in cav_ids) / len(cav_ids)
                  for n in range(len(ts))]
        charts["platoon_speed"] = ({"platoon": (ts, mean_v)},
                                   "Platoon average speed", "t [s]", "v [m/s]")
        lane_y = cfg.lane_y
        follow: dict[str, tuple[list, list]] = {}
        for v in cav_ids:
            xs, ys = [], []
            for n in range(len(ts)):
                lane_v = min(range(len(lane_y)), key=lambda i: abs(lane_y[i] - data[v]["y"][n]))
                best = None
                for o in cav_ids:
                    if o == v:
                        continue
                    lane_o = min(range(len(lane_y)), key=lambda i: abs(lane_y[i] - data[o]["y"][n]))
                    gap = data[o]["s"][n] - data[v]["s"][n]
                    if lane_o == lane_v and gap > 0 and (best is None or gap < best):
                        best = gap
                if best is not None:
                    xs.append(ts[n])
                    ys.append(best)
            if xs:
                follow[v] = (xs, ys)
        if follow:
            charts["following_distance"] = (follow, "CAV following distances", "t [s]", "gap [m]")
    if hv_ids:
        charts["upstream_speed"] = ({v: (data[v]["t"], data[v]["v"]) for v in hv_ids},
                                    "HV speeds", "t [s]", "v [m/s]")
    for name, (series, title, xl, yl) in charts.items():
        (out / f"{name}.svg").write_text(line_chart(series, title, xl, yl), encoding="utf-8")
        (out / f"{name}.csv").write_text(_chart_csv(series, xl.split(" ")[0], yl.split(" ")[0]),
                                         encoding="utf-8")
    print(f"wrote {len(charts)} charts to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CAVSWARM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = argparse.ArgumentParser(prog="cavswarm",
                                     description="Cooperative vehicle swarming simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and emit logs, MOEs, and plots data")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--mode", choices=["swarm", "baseline", "both"], default="swarm")
    p_run.set_defaults(func=cmd_run)

    p_plan = sub.add_parser("plan", help="solve one planning episode and print the cell table")
    p_plan.add_argument("--config", required=True)
    p_plan.add_argument("--horizon", type=int, default=None)
    p_plan.add_argument("--out", default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_plot = sub.add_parser("plot", help="render SVG charts from a trajectory log")
    p_plot.add_argument("--log", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--config", default=None)
    p_plot.set_defaults(func=cmd_plot)

    p_val = sub.add_parser("validate", help="re-check a plan against a scenario config")
    p_val.add_argument("--plan", required=True)
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
