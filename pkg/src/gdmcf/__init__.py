"""Graph diffusion model for collaborative filtering with multi-level corruption."""

from .config import ConfigError, RunConfig, TrainConfig
from .corruption import ContinuousSchedule, DiscreteSchedule, make_schedules
from .dataio import DatasetSplit, load_checkpoint, prepare_splits, save_checkpoint, synthetic_blocks
from .denoiser import ModelParams, init_params
from .estimator import GDMCF
from .graph import InteractionMatrix, build_adjacency, propagate
from .inference import generate, rank_topk
from .metrics import evaluate, longtail_slice
from .training import train

__version__ = "0.1.0"

__all__ = [
    "GDMCF",
    "ConfigError",
    "ContinuousSchedule",
    "DatasetSplit",
    "DiscreteSchedule",
    "InteractionMatrix",
    "ModelParams",
    "RunConfig",
    "TrainConfig",
    "build_adjacency",
    "evaluate",
    "generate",
    "init_params",
    "load_checkpoint",
    "longtail_slice",
    "make_schedules",
    "prepare_splits",
    "propagate",
    "rank_topk",
    "save_checkpoint",
    "synthetic_blocks",
    "train",
]
