"""Stochastic clustered federated learning: simulator and library."""
from .baselines import run_baseline
from .datagen import FederatedScenario, make_base_dataset
from .fedcore import ServerState, TrainConfig, run_stocfl
from .numkernel import DatasetShard, ModelParams, ModelSpec
from .reprcluster import ClusterPartition

__version__ = "0.1.0"

__all__ = [
    "ClusterPartition",
    "DatasetShard",
    "FederatedScenario",
    "ModelParams",
    "ModelSpec",
    "ServerState",
    "TrainConfig",
    "make_base_dataset",
    "run_baseline",
    "run_stocfl",
]
