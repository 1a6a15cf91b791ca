from .windows import (
    WindowBatch,
    SegmentBatch,
    make_windows,
    n_segments,
    segment,
    segment_and_normalize,
    desegment,
    window_anchors,
)
from .sap import (
    BOS_ID,
    SEP_ID,
    VOCAB_SIZE,
    ContextTooLong,
    SaPContext,
    build_sap_context,
    sample_training_examples,
)
from .model import HyperParams, NeuralFilterModel, BACKBONES
from .training import (
    TrainConfig,
    TrainingDiverged,
    estimate_trajectory,
    train,
    window_loss,
)
from .checkpoint import CheckpointFormatError, save_checkpoint, load_checkpoint

__all__ = [
    "WindowBatch",
    "SegmentBatch",
    "make_windows",
    "n_segments",
    "segment",
    "segment_and_normalize",
    "desegment",
    "window_anchors",
    "SaPContext",
    "ContextTooLong",
    "build_sap_context",
    "sample_training_examples",
    "BOS_ID",
    "SEP_ID",
    "VOCAB_SIZE",
    "HyperParams",
    "NeuralFilterModel",
    "BACKBONES",
    "TrainConfig",
    "TrainingDiverged",
    "train",
    "window_loss",
    "estimate_trajectory",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointFormatError",
]
