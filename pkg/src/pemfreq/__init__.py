"""Two-area grid frequency dynamics coupled to a packetized water-heater fleet."""
from .aggregator import Aggregator, DampingEstimate, TimerHistogram, damping_estimate_uniform
from .engine import Metrics, Scenario, TimeSeries, run_proportional_model, run_scenario, sweep
from .fleet import ControlPolicy, Fleet, FleetParams
from .grid import AreaParams, Disturbance, GridState, NetworkModel
from .scenario import load_bundled, parse_scenario

__all__ = [
    "Aggregator", "AreaParams", "ControlPolicy", "DampingEstimate", "Disturbance", "Fleet", "FleetParams",
    "GridState", "Metrics", "NetworkModel", "Scenario", "TimeSeries", "TimerHistogram",
    "damping_estimate_uniform", "load_bundled", "parse_scenario", "run_proportional_model", "run_scenario", "sweep",
]
