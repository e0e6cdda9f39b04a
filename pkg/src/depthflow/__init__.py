"""Depth-wise flow-map distillation lab.

A multi-layer residual transformer teacher, read as Euler steps of a depth
ODE, is compressed into a single shared-weight block unrolled along a
normalized depth grid. The cheap student then screens candidate noises for
the expensive one-step teacher (scout-and-refine). Everything runs at desk
scale on synthetic 2-D Gaussian mixtures with exact oracles.
"""

from .blocks import BlockConfig, BlockParams, ConditionEmbedder, count_params
from .config import RunConfig, load_config
from .distill import DistillBatch, distill_train, loss_output, loss_patches, loss_total
from .metrics import energy_distance
from .mixture import GaussianMixture, ring_mixture
from .optim import AdamW, TrainConfig, lr_schedule
from .scout import Candidate, ScoutConfig, make_scorer, scout_and_refine
from .student import StudentConfig, StudentModel, depth_grid, layer_map
from .teacher import (
    DepthTrace,
    FieldConfig,
    FlowMapModel,
    VelocityField,
    freeflow_distill,
    freeflow_target,
    integrate_ode,
    train_base_velocity,
)
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BlockConfig",
    "BlockParams",
    "Candidate",
    "ConditionEmbedder",
    "DepthTrace",
    "DistillBatch",
    "FieldConfig",
    "FlowMapModel",
    "GaussianMixture",
    "RunConfig",
    "ScoutConfig",
    "StudentConfig",
    "StudentModel",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VelocityField",
    "backward",
    "count_params",
    "depth_grid",
    "distill_train",
    "energy_distance",
    "freeflow_distill",
    "freeflow_target",
    "integrate_ode",
    "layer_map",
    "load_config",
    "loss_output",
    "loss_patches",
    "loss_total",
    "lr_schedule",
    "make_scorer",
    "ring_mixture",
    "scout_and_refine",
    "train_base_velocity",
]
