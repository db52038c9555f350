"""Event-triggered decentralized federated learning over time-varying graphs."""
from .config import ExperimentConfig, parse_config
from .engine import RunResult, Simulation, monte_carlo, run_experiment

__version__ = "0.1.0"
__all__ = ["ExperimentConfig", "RunResult", "Simulation", "monte_carlo", "parse_config",
           "run_experiment"]
