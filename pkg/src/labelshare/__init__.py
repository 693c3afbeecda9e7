"""Label-sharing toolkit for independent multi-label segmentation tasks."""

from .labelspace import (
    LabelDescriptor,
    SharedGroup,
    SharedLabelSpace,
    SizeTable,
    TaskSpec,
    assign_task,
    build_shared_space,
    inverse_map,
    load_space,
    save_space,
    validate_space,
)
from .assignment import hungarian_min_cost
from .net import Model, ModelConfig
from .training import Checkpoint, TrainConfig, predict, train, train_incremental

__version__ = "0.1.0"

__all__ = [
    "LabelDescriptor",
    "TaskSpec",
    "SizeTable",
    "SharedGroup",
    "SharedLabelSpace",
    "build_shared_space",
    "assign_task",
    "inverse_map",
    "validate_space",
    "save_space",
    "load_space",
    "hungarian_min_cost",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "Checkpoint",
    "train",
    "train_incremental",
    "predict",
    "__version__",
]
