"""Condition-aware convolutional surrogate for sintering porosity evolution.

A small numpy library covering the full pipeline: synthetic powder beds
and ground-truth sintering, patch datasets, a condition-gated
encoder-decoder with hand-derived gradients, Adam training, tiled
inference over long tracks, and layerwise component simulation. See
README.md for the tour; the `sinternet` CLI exposes each step.
"""

__version__ = "0.1.0"

from .data import (
    Condition,
    OracleParams,
    PowderBedSpec,
    SamplePair,
    bed_to_track,
    generate_track,
    lhs_sample,
    load_pairs,
    rain_deposit,
    sample_conditions,
    sinter_oracle,
    surface_row,
    write_pairs,
)
from .model import (
    ModelConfig,
    ModelWeights,
    backward,
    bce_loss,
    build,
    count_parameters,
    forward,
    load,
    save,
)
from .patches import (
    ComponentSpec,
    CropPlan,
    crop_track,
    infer_track,
    mean_sinter_depth,
    simulate_component,
    tile_offsets,
)
from .pgm import read_pgm, write_pgm
from .training import (
    Adam,
    TrainConfig,
    evaluate_pairs,
    global_accuracy,
    split_by_condition,
    train,
)

__all__ = [
    "Condition",
    "OracleParams",
    "PowderBedSpec",
    "SamplePair",
    "bed_to_track",
    "generate_track",
    "lhs_sample",
    "load_pairs",
    "rain_deposit",
    "sample_conditions",
    "sinter_oracle",
    "surface_row",
    "write_pairs",
    "ModelConfig",
    "ModelWeights",
    "backward",
    "bce_loss",
    "build",
    "count_parameters",
    "forward",
    "load",
    "save",
    "ComponentSpec",
    "CropPlan",
    "crop_track",
    "infer_track",
    "mean_sinter_depth",
    "simulate_component",
    "tile_offsets",
    "read_pgm",
    "write_pgm",
    "Adam",
    "TrainConfig",
    "evaluate_pairs",
    "global_accuracy",
    "split_by_condition",
    "train",
]
