"""Multi-task eye-contact network with a pose-regression side branch."""

from .model import FULL_SCHEDULE, PicnnConfig, PicnnModel, layer_shapes, picnn_loss
from .train import TrainData, TrainLog, train, write_train_log

__all__ = [
    "FULL_SCHEDULE", "PicnnConfig", "PicnnModel", "layer_shapes", "picnn_loss",
    "TrainData", "TrainLog", "train", "write_train_log",
]
