"""Federated learning simulator comparing weight averaging, asynchronous
shallow/deep weight updating, and distributed mutual learning."""

from .config import ConfigError, SimulationConfig, load_config, parse_config
from .data import Dataset, FoldSchedule, generate_synthetic, load_csv, normalize, stratified_kfold
from .nn import LossSpec, ModelParameters, init_params
from .protocols import Strategy, StrategySpec
from .simulation import SimulationResult, evaluate, run_simulation, write_outputs

__all__ = [
    "ConfigError", "Dataset", "FoldSchedule", "LossSpec", "ModelParameters", "SimulationConfig",
    "SimulationResult", "Strategy", "StrategySpec", "evaluate", "generate_synthetic", "init_params",
    "load_config", "load_csv", "normalize", "parse_config", "run_simulation", "stratified_kfold",
    "write_outputs",
]
__version__ = "0.1.0"
