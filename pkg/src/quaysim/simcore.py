"""Simulation core: the event engine, traffic generation and metrics in one namespace.

The implementation lives in ``engine``, ``traffic`` and ``metrics``; this
module collects the pieces needed to build and run a scenario.
"""

from .engine import ChainPlan, Scenario, ScenarioError, SimResult, Simulation, plan_chains, run_scenario
from .metrics import ConservationError, MetricsReport, collect_metrics, nearest_rank, percentiles
from .traffic import Dist, FlowPlan, Target, TrafficModel, generate_traffic, packet_times

__all__ = [
    "ChainPlan", "ConservationError", "Dist", "FlowPlan", "MetricsReport", "Scenario", "ScenarioError",
    "SimResult", "Simulation", "Target", "TrafficModel", "collect_metrics", "generate_traffic",
    "nearest_rank", "packet_times", "percentiles", "plan_chains", "run_scenario",
]
