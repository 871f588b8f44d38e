"""Cooperative vehicle swarming: grid planning, trajectory tracking, traffic."""

from .grid import (CellIndex, GriddingInputs, GridError, MovingGrid, OutOfGridError,
                   build_grid, cell_to_world, default_lane_centers, world_to_cell)
from .planner import (BinaryProgram, BlockAssignment, BudgetError, InfeasibleError,
                      OccupancyPlan, PlannerError, PlannerWeights, Violation,
                      build_program, compute_delta, compute_epsilon,
                      program_objective, quadratic_objective, should_replan,
                      validate_plan)
from .sim import (MOEReport, ScenarioConfig, SimLog, SimulationError, build_initial_world,
                  compute_moes, run_hv_reference, run_scenario, step_tick)
from .solver import SolveLimits, SolveStats, solve
from .tracker import (LatState, LonState, LqrProblem, LqrSolution, TrackerParams,
                      build_lat_problem, build_lon_problem, clamp_controls, lqr_solve)
from .traffic import (HvForecast, IdmParams, VehicleState, forecast_cells, idm_accel,
                      step_hv)
from .trajgen import ReferencePath, Waypoint, build_reference_path, generate_waypoints

__version__ = "0.1.0"
