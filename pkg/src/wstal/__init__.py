"""Weakly supervised temporal action localization on pre-extracted segment features."""

from .config import RunConfig
from .data import Dataset, GroundTruthSegment, VideoRecord, load_dataset, save_dataset
from .evaluate import EvalConfig, EvalResult, mean_ap, tiou
from .memory import MemoryBank, MemoryConfig
from .network import LocalizationNetwork, ModelConfig
from .proposals import InferenceConfig, Proposal, nms, run_inference
from .synthetic import SyntheticSpec, generate_dataset, split_dataset
from .train import TrainConfig, Trainer, load_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvalConfig",
    "EvalResult",
    "GroundTruthSegment",
    "InferenceConfig",
    "LocalizationNetwork",
    "MemoryBank",
    "MemoryConfig",
    "ModelConfig",
    "Proposal",
    "RunConfig",
    "SyntheticSpec",
    "TrainConfig",
    "Trainer",
    "VideoRecord",
    "generate_dataset",
    "load_checkpoint",
    "load_dataset",
    "mean_ap",
    "nms",
    "run_inference",
    "save_dataset",
    "split_dataset",
    "tiou",
    "__version__",
]
