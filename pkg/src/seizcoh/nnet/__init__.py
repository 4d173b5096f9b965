"""Small numpy neural-network substrate: dense and 1-D conv stacks, SGD."""
from .gradcheck import gradient_check
from .layers import (
    Activation,
    AvgPool1D,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    ShapeError,
)
from .network import (
    ClassBalancing,
    Network,
    TrainConfig,
    TrainedModel,
    TrainingDiverged,
    bce_with_logits,
    class_weights,
    forward,
    train,
)
from .serialize import ModelFormatError, load_model, save_model

__all__ = [
    "Activation", "AvgPool1D", "BatchNorm", "Conv1D", "Dense", "Dropout", "Flatten", "MaxPool1D",
    "ShapeError", "ClassBalancing", "Network", "TrainConfig", "TrainedModel", "TrainingDiverged",
    "bce_with_logits", "class_weights", "forward", "train", "gradient_check", "load_model",
    "save_model", "ModelFormatError",
]
