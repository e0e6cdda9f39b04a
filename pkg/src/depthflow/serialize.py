"""Model <-> checkpoint conversion for every model kind."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .checkpoint import CheckpointError
from .student import StudentConfig, StudentModel
from .teacher import FieldConfig, FlowMapModel, VelocityField

_KINDS = {
    VelocityField.kind: (FieldConfig, VelocityField),
    FlowMapModel.kind: (FieldConfig, FlowMapModel),
    StudentModel.kind: (StudentConfig, StudentModel),
}


def model_config_dict(model):
    return {"model": asdict(model.cfg), "dtype": model.dtype.name}


def model_from_checkpoint(kind, config, tensors):
    """Instantiate the tagged model class and load every parameter record."""
    if kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    cfg_cls, model_cls = _KINDS[kind]
    cfg = cfg_cls(**config["model"])
    model = model_cls(cfg, np.random.default_rng(0), dtype=config["dtype"])
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise CheckpointError(f"parameter records disagree; missing={missing} extra={extra}")
    for name, tensor in params.items():
        arr = tensors[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"record {name!r} has shape {arr.shape}, model expects {tensor.data.shape}"
            )
        tensor.data = arr.astype(model.dtype, copy=False)
    return model
