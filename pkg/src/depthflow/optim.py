"""Training schedule and the decoupled-weight-decay adaptive optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class TrainingError(RuntimeError):
    """Optimization hit a non-finite quantity or otherwise diverged."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by every training phase.

    `lambda_patches` only matters for the depth distillation stage but lives
    here so one config object describes a run end to end.
    """

    total_steps: int
    batch_size: int
    lr: float
    warmup_steps: int = 0
    lambda_patches: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    log_every: int = 50

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.lambda_patches < 0:
            raise ValueError("lambda_patches must be >= 0")
        if self.lr <= 0 or self.log_every < 1:
            raise ValueError("lr must be positive and log_every >= 1")


def lr_schedule(step, cfg: TrainConfig):
    """Linear warmup to the base rate, then cosine annealing to zero."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One bias-corrected moment update with decoupled decay; returns (p, m, v)."""
    m2 = beta1 * m + (1.0 - beta1) * g
    v2 = beta2 * v + (1.0 - beta2) * g * g
    mhat = m2 / (1.0 - beta1**t)
    vhat = v2 / (1.0 - beta2**t)
    p2 = p - lr * (mhat / (np.sqrt(vhat) + eps)) - lr * weight_decay * p
    return p2, m2, v2


def global_grad_norm(grads):
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


class AdamW:
    """Adaptive-moment optimizer over a named parameter dict.

    Gradients arrive keyed by Tensor identity (the map `backward` returns);
    parameters missing from the map are treated as zero-gradient. Updates
    mutate parameter data in place, so they require exclusive access.
    """

    def __init__(self, params, cfg: TrainConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, grads, lr):
        """Apply one update at rate `lr`, optionally clipped by global norm."""
        cfg = self.cfg
        picked = {}
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter '{name}'")
            picked[name] = g
        if cfg.clip_norm and cfg.clip_norm > 0:
            norm = global_grad_norm(picked.values())
            if norm > cfg.clip_norm:
                factor = cfg.clip_norm / norm
                picked = {name: g * factor for name, g in picked.items()}
        self.t += 1
        for name, p in self.params.items():
            p2, m2, v2 = adamw_update(
                p.data, picked[name].astype(p.dtype, copy=False),
                self._m[name], self._v[name],
                self.t, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
            )
            p.data = p2.astype(p.dtype, copy=False)
            self._m[name] = m2
            self._v[name] = v2


def param_tensors(named):
    """Flatten a named-parameter dict into the Tensor list, insertion order."""
    out = []
    for t in named.values():
        if not isinstance(t, Tensor):
            raise TypeError("parameters must be Tensors")
        out.append(t)
    return out
