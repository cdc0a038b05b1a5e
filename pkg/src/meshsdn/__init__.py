"""Deterministic simulator for hybrid SDN over wireless mesh networks."""
from .scenario import Scenario, ScenarioError, load_scenario
from .simulation import RunResult, Simulation, run_scenario

__all__ = [
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "RunResult",
    "Simulation",
    "run_scenario",
]

__version__ = "0.1.0"
