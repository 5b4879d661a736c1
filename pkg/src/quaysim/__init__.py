"""Discrete-event simulator for cooperatively scheduled, autoscaled NF chains."""

from .batch import BatchParams, ChainCostSummary, estimated_rate, ideal_rate, min_batch, min_batch_scan
from .core_types import (
    ChainSpec,
    ClusterSpec,
    CostConstants,
    MonitoringConfig,
    NfProfile,
    ScalingConfig,
    StateConfig,
    TrafficFilter,
    ValidationError,
    WorkerSpec,
    cycles_to_ns,
    validate_cluster_spec,
)
from .engine import Scenario, SimResult, Simulation, plan_chains, run_scenario
from .packet_plane import copy_cost, remap_ratio
from .traffic import Dist, TrafficModel

__version__ = "0.1.0"

__all__ = [
    "BatchParams", "ChainCostSummary", "ChainSpec", "ClusterSpec", "CostConstants", "Dist",
    "MonitoringConfig", "NfProfile", "Scenario", "ScalingConfig", "SimResult", "Simulation",
    "StateConfig", "TrafficFilter", "TrafficModel", "ValidationError", "WorkerSpec",
    "copy_cost", "cycles_to_ns", "estimated_rate", "ideal_rate", "min_batch", "min_batch_scan",
    "plan_chains", "remap_ratio", "run_scenario", "validate_cluster_spec",
]
