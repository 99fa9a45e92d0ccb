"""Tube-based robust economic MPC for linear systems with additive disturbances."""

from .closedloop import ClosedLoopLog, DisturbanceSource, check_feasible_region, run
from .cost import StageCost, check_dissipativity, compute_ross, eval_stage, lipschitz_const
from .geometry import Polytope, minkowski_sum, pontryagin_diff
from .model import ConstraintData, LinearTubeModel
from .ocp import OcpProblem, OcpSolution, solve_ocp, solve_reach_ball, solve_tube_ocp
from .rci import min_rpi, tighten, verify_rci
from .scenario import Scenario, build_system, load_scenario
from .solver import solve_convex

__version__ = "0.1.0"

__all__ = [
    "ClosedLoopLog", "DisturbanceSource", "check_feasible_region", "run",
    "StageCost", "check_dissipativity", "compute_ross", "eval_stage", "lipschitz_const",
    "Polytope", "minkowski_sum", "pontryagin_diff", "ConstraintData", "LinearTubeModel",
    "OcpProblem", "OcpSolution", "solve_ocp", "solve_reach_ball", "solve_tube_ocp",
    "min_rpi", "tighten", "verify_rci", "Scenario", "build_system", "load_scenario",
    "solve_convex",
]
