from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .loop import EpochLog, TrainConfig, TrainingDiverged, TrainResult, batch_loss, default_weights, train
from .rng import SplitMix64, shuffle, split
from .synthetic import Sample, dataset_arrays, generate_synthetic, load_dataset, save_dataset

__all__ = [
    "SplitMix64",
    "shuffle",
    "split",
    "Sample",
    "generate_synthetic",
    "dataset_arrays",
    "save_dataset",
    "load_dataset",
    "TrainConfig",
    "EpochLog",
    "TrainResult",
    "TrainingDiverged",
    "batch_loss",
    "default_weights",
    "train",
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]
