"""Occlusion edge and orientation estimation on a small numpy autograd engine."""

from .ablation import AblationResult, run_ablation
from .config import RunConfig
from .estimator import OFNetEstimator
from .evaluation import MetricsReport, evaluate, match_boundaries, pr_curve, summarize
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    DataError,
    ManifestError,
    NumericError,
    OFNetError,
    UsageError,
)
from .loss import LossConfig, total_loss
from .model import ModelVariant, OFNet, build_model, load_checkpoint, save_checkpoint, variant_by_name
from .postprocess import OcclusionBoundary, postprocess
from .synth import OcclusionSample, SceneSpec, generate_dataset, generate_scene, read_dataset, write_dataset
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "CheckpointError",
    "ConfigurationError",
    "DataError",
    "LossConfig",
    "ManifestError",
    "MetricsReport",
    "ModelVariant",
    "NumericError",
    "OFNet",
    "OFNetError",
    "OFNetEstimator",
    "OcclusionBoundary",
    "OcclusionSample",
    "RunConfig",
    "SceneSpec",
    "TrainConfig",
    "UsageError",
    "build_model",
    "evaluate",
    "generate_dataset",
    "generate_scene",
    "load_checkpoint",
    "match_boundaries",
    "postprocess",
    "pr_curve",
    "read_dataset",
    "run_ablation",
    "save_checkpoint",
    "summarize",
    "total_loss",
    "train",
    "variant_by_name",
    "write_dataset",
]
