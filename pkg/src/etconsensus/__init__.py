"""Distributed dynamic event-triggered average consensus with designable minimum inter-event times."""

from .analysis import (
    AdversarialScenario,
    Metrics,
    adversarial_miet_run,
    compute_metrics,
    h2_cost,
    lyapunov,
    miet_report,
    sigma_sweep,
    wiener_band_check,
)
from .dynamics import AgentParams, AgentState, ConfigError, NeighborView, make_params
from .graph import GraphError, WeightedDigraph, five_agent_digraph, laplacian, ring
from .scenario import Scenario, ScenarioError, bundled_scenario, load_scenario
from .simulator import EventKind, EventRecord, Mode, NoiseModel, SimConfig, Trajectory, run

__all__ = [
    "AdversarialScenario", "AgentParams", "AgentState", "ConfigError", "EventKind", "EventRecord",
    "GraphError", "Metrics", "Mode", "NeighborView", "NoiseModel", "Scenario", "ScenarioError",
    "SimConfig", "Trajectory", "WeightedDigraph", "adversarial_miet_run", "bundled_scenario",
    "compute_metrics", "five_agent_digraph", "h2_cost", "laplacian", "load_scenario", "lyapunov",
    "make_params", "miet_report", "ring", "run", "sigma_sweep", "wiener_band_check",
]
