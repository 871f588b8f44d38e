"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
summary lines.  The shipped scenario runs once per session (see conftest).
"""

import json
import random
import time
from pathlib import Path

import numpy as np
import pytest

from cavswarm.cli import main
from cavswarm.planner import InfeasibleError, build_program, validate_plan
from cavswarm.sim import ScenarioConfig
from cavswarm.solver import solve
from cavswarm.tracker import LqrProblem, clamp_controls, lqr_solve

from oracle import enumerate_optimum, random_instance
from test_tracker import qp_oracle, rand_problem, lane_change_ref
from cavswarm.tracker import LatState, TrackerParams, build_lat_problem, build_lon_problem
from cavswarm.trajgen import build_reference_path, generate_waypoints


collected_plans = []


def test_criterion_1_planner_optimality_oracle():
    rng = random.Random(424242)
    t0 = time.perf_counter()
    agree = infeasible = 0
    for _ in range(200):
        grid, init, fc, w, n = random_instance(rng)
        best, _ = enumerate_optimum(grid, init, fc, w, n)
        prog = build_program(grid, init, fc, w, n)
        if best is None:
            with pytest.raises(InfeasibleError):
                solve(prog)
            infeasible += 1
            continue
        plan = solve(prog)
        assert plan.objective_value == best, \
            f"objective {plan.objective_value} != enumeration optimum {best}"
        collected_plans.append((plan, grid, fc, init))
        agree += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"oracle suite took {elapsed:.1f}s"
    print(f"\nPASS criterion 1: {agree} optimal matches + {infeasible} "
          f"infeasible agreements in {elapsed:.1f}s")


def test_criterion_2_constraint_soundness(paper_runs):
    checked = 0
    for plan, grid, fc, init in collected_plans:
        assert validate_plan(plan, grid, fc, init) == []
        checked += 1
    for ep in paper_runs["swarm"].episodes:
        violations = validate_plan(ep.plan, ep.grid, ep.forecast, ep.init_cells)
        assert violations == [], f"episode {ep.index}: {violations}"
        checked += 1
    print(f"PASS criterion 2: {checked} solver plans re-validated with 0 violations")


def test_criterion_3_first_episode_reproduces_the_maneuver(paper_runs):
    ep = paper_runs["swarm"].episodes[0]
    cfg = paper_runs["cfg"]
    assert ep.mode == "overtaking"
    assert ep.complete_step is not None and ep.complete_step <= 15, \
        f"overtake completes at step {ep.complete_step}"
    assert len(ep.blocking) >= 2, "fewer than two blocking assignments"
    finals = [seq[-1] for seq in ep.plan.rows_cols()]
    assert all(col == cfg.platoon_lane for _, col in finals)
    front = ep.forecast.cells[ep.forecast.front_hv_index][0]
    assert all(row > front.row for row, _ in finals)
    lanes_used = {col for seq in ep.plan.rows_cols() for _, col in seq}
    print(f"PASS criterion 3: overtake complete at step {ep.complete_step} "
          f"(<= 15), {len(ep.blocking)} blocking assignments, "
          f"all CAVs end in lane {cfg.platoon_lane}, lanes used: {sorted(lanes_used)}")


def test_criterion_4_mobility_uplift(paper_runs):
    swarm_avg = paper_runs["swarm_moes"].platoon_speed_avg
    base_avg = paper_runs["baseline_moes"].platoon_speed_avg
    uplift = 100.0 * (swarm_avg / base_avg - 1.0)
    assert 12.04 - 3.0 <= uplift <= 12.04 + 3.0, f"uplift {uplift:.2f}%"
    assert paper_runs["paired_seconds"] < 120.0, \
        f"paired run took {paper_runs['paired_seconds']:.0f}s"
    print(f"PASS criterion 4: swarm {swarm_avg:.2f} m/s vs baseline "
          f"{base_avg:.2f} m/s -> +{uplift:.2f}% (target 12.04 +- 3), "
          f"paired run {paper_runs['paired_seconds']:.0f}s < 120s")


def test_criterion_5_safety_following_distances(paper_runs):
    moes = paper_runs["swarm_moes"]
    assert moes.following_min is not None and moes.following_min >= 5.0
    assert 16.80 * 0.75 <= moes.following_avg <= 16.80 * 1.25, \
        f"avg following {moes.following_avg:.2f}"
    assert paper_runs["swarm"].collisions == []
    print(f"PASS criterion 5: min following {moes.following_min:.2f} m >= 5, "
          f"avg {moes.following_avg:.2f} m within 16.80 +- 25%")


def test_criterion_6_upstream_impact(paper_runs):
    moes = paper_runs["swarm_moes"]
    chain = moes.upstream_reduction
    assert len(chain) == 5
    assert all(a > b for a, b in zip(chain, chain[1:])), f"not decreasing: {chain}"
    assert chain[0] <= 4.0, f"first follower {chain[0]:.2f}%"
    assert chain[4] < 0.5, f"fifth follower {chain[4]:.2f}%"
    assert moes.upstream_min_gap_headway >= 1.2
    print(f"PASS criterion 6: reductions {[round(x, 2) for x in chain]}% "
          f"(strictly decreasing, first <= 4, fifth < 0.5), min-gap headway "
          f"{moes.upstream_min_gap_headway:.2f}s >= 1.2")


def test_criterion_7_tracker_dp_equals_qp():
    rng = np.random.default_rng(20260809)
    worst_u = worst_c = 0.0
    for _ in range(100):
        prob = rand_problem(rng)
        sol = lqr_solve(prob)
        u_ref, cost_ref = qp_oracle(prob)
        du = np.abs(sol.U - u_ref).max() / max(1.0, np.abs(u_ref).max())
        dc = abs(sol.cost - cost_ref) / max(1.0, abs(cost_ref))
        worst_u = max(worst_u, du)
        worst_c = max(worst_c, dc)
        assert du <= 1e-6 and dc <= 1e-8
    # lateral zero case: straight reference, zero initial error, zero steering
    from cavswarm.grid import MovingGrid
    g = MovingGrid(t0=0.0, s0=0.0, v_cell=17.5, n_rows=8, n_cols=1,
                   l_cell=15.0, w_cell=3.0, lane_y=(0.0,))
    ref = build_reference_path(generate_waypoints([(1, 1)] * 5, g, 3.0))
    lat = build_lat_problem(LatState(l=0.0, phi=0.0), ref, TrackerParams(), horizon=100)
    sol = lqr_solve(lat)
    assert np.all(sol.U == 0.0)
    # clamped solutions never violate the configured bounds
    params = TrackerParams()
    ref2 = lane_change_ref()
    from cavswarm.tracker import LonState
    lon = build_lon_problem(LonState(s=-40.0, v=24.0), ref2, params,
                            horizon=400, t0=0.0)
    clamped = clamp_controls(lqr_solve(lon), lon)
    assert clamped.U.min() >= params.a_min - 1e-12
    assert clamped.U.max() <= params.a_max + 1e-12
    assert clamped.X[:, 1].min() >= params.v_min - 1e-12
    assert clamped.X[:, 1].max() <= params.v_max + 1e-12
    print(f"PASS criterion 7: 100 DP-QP matches (worst rel err: controls "
          f"{worst_u:.2e}, cost {worst_c:.2e}); lateral zero case exact; "
          f"clamped controls within bounds")


def test_criterion_8_cmd_run_is_byte_deterministic(tmp_path):
    cfg = ScenarioConfig(duration=60.0, horizon=8, side_lanes=(), side_lead_s=(),
                         front_hv_gap=2000.0, upstream_count=0)
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg_path), "--out", str(out),
                     "--mode", "both"]) == 0
        outs.append(out)
    files_a = sorted(p.name for p in outs[0].iterdir())
    files_b = sorted(p.name for p in outs[1].iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), \
            f"{name} differs between runs"
    print(f"PASS criterion 8: {len(files_a)} output files byte-identical "
          f"across two runs")
