"""Experiment scenarios, data generation and closed-loop simulation."""
from .benchmark import Comparison, compare_scenarios, plateau, run_suite, suite
from .closed_loop import (ClosedLoopError, ClosedLoopTrace, GroundTruth, coordinate_transform, fit_model,
                          generate_datasets, run_closed_loop, target_equilibrium)
from .scenario import (ConfigError, Scenario, four_tanks_scenario, load_scenario, scenario_from_dict,
                       vdp_scenario)

__all__ = [
    "ClosedLoopError", "ClosedLoopTrace", "Comparison", "ConfigError", "GroundTruth", "Scenario",
    "compare_scenarios", "coordinate_transform", "fit_model", "four_tanks_scenario", "generate_datasets",
    "load_scenario", "plateau", "run_closed_loop", "run_suite", "scenario_from_dict", "suite",
    "target_equilibrium", "vdp_scenario",
]
