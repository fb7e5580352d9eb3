"""Neural Turing Machines with structured (hierarchical) memory, trained from scratch on numpy."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DimensionError, TrainingAborted
from .memory_graph import ModelConfig, NTMModel
from .tasks import TaskConfig, gen_copy, gen_recall
from .trainer import ExperimentConfig, TrainConfig, run_experiment

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "TrainingAborted",
    "ModelConfig", "NTMModel", "TaskConfig", "gen_copy", "gen_recall",
    "ExperimentConfig", "TrainConfig", "run_experiment",
]
