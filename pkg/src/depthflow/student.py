"""Shared-block student: one transformer block unrolled along depth.

The student re-uses a single set of block weights K times, conditioning each
application on a normalized depth coordinate from an even grid over [0, 1].
Per-step linear projections lift its hidden states into the teacher's width
for feature supervision; when the widths already match the projection is a
fixed identity with no parameters, so the trainable count is invariant in K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import BlockConfig, BlockParams, CondConfig, ConditionEmbedder, block_rows_forward
from .teacher import DepthTrace
from .tensor import Tensor, add, matmul, no_tape

ROLLOUT_MODES = ("full", "truncated")


@dataclass(frozen=True)
class StudentConfig:
    data_dim: int = 2
    hidden: int = 32
    heads: int = 4
    mlp_ratio: int = 4
    rollout_steps: int = 8
    cond_dim: int = 32
    n_classes: int = 8
    teacher_hidden: int = 64
    teacher_depth: int = 8
    rollout_mode: str = "full"

    def __post_init__(self):
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be >= 1")
        if self.teacher_depth < 1 or self.teacher_hidden < 1:
            raise ValueError("teacher layout must be positive")
        if self.rollout_mode not in ROLLOUT_MODES:
            raise ValueError(f"rollout_mode must be one of {ROLLOUT_MODES}")
        BlockConfig(self.hidden, self.heads, self.mlp_ratio, self.cond_dim)

    @property
    def block(self):
        return BlockConfig(self.hidden, self.heads, self.mlp_ratio, self.cond_dim)


def depth_grid(steps):
    """Even depth coordinates k/(K-1) for k = 0..K-1; a single step sits at 0."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps == 1:
        return np.zeros(1)
    return np.arange(steps) / (steps - 1)


def layer_map(i, steps, depth):
    """Teacher layer supervising student step i: round((i+1) * L / K), clamped.

    Rounding is half-up so the map is strictly increasing whenever K <= L.
    """
    if not 0 <= i < steps:
        raise ValueError(f"step index {i} outside [0, {steps})")
    if depth < 1:
        raise ValueError("teacher depth must be >= 1")
    raw = int(math.floor((i + 1) * depth / steps + 0.5))
    return max(1, min(depth, raw))


def layer_map_table(steps, depth):
    return [layer_map(i, steps, depth) for i in range(steps)]


class StudentModel:
    """One shared block plus embed/head, projections, and conditioning."""

    kind = "student"

    def __init__(self, cfg: StudentConfig, rng, dtype="float32"):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        d, h = cfg.data_dim, cfg.hidden
        self.embed_w = Tensor(
            (rng.standard_normal((d, h)) / np.sqrt(d)).astype(self.dtype), requires_grad=True
        )
        self.embed_b = Tensor(np.zeros(h, dtype=self.dtype), requires_grad=True)
        self.head_w = Tensor(np.zeros((h, cfg.data_dim), dtype=self.dtype), requires_grad=True)
        self.head_b = Tensor(np.zeros(cfg.data_dim, dtype=self.dtype), requires_grad=True)
        self.cond = ConditionEmbedder(
            CondConfig(cfg.cond_dim, cfg.n_classes, use_w=True, use_tau=True), rng, self.dtype
        )
        self.block = BlockParams(cfg.block, rng, self.dtype)
        if cfg.hidden == cfg.teacher_hidden:
            self.projections = None
        else:
            self.projections = [
                Tensor(
                    (rng.standard_normal((h, cfg.teacher_hidden)) / np.sqrt(h)).astype(self.dtype),
                    requires_grad=True,
                )
                for _ in range(cfg.rollout_steps)
            ]
        self.eval_count = 0

    def named_parameters(self):
        out = {
            "embed.w": self.embed_w,
            "embed.b": self.embed_b,
            "head.w": self.head_w,
            "head.b": self.head_b,
        }
        out.update(self.cond.named("cond."))
        out.update(self.block.named("block."))
        if self.projections is not None:
            for i, p in enumerate(self.projections):
                out[f"proj.{i:02d}"] = p
        return out

    def param_count(self):
        return sum(t.size for t in self.named_parameters().values())

    def config_dict(self):
        from .serialize import model_config_dict

        return model_config_dict(self)

    def _embed_input(self, z):
        return add(matmul(Tensor(np.asarray(z, dtype=self.dtype)), self.embed_w), self.embed_b)

    def _unroll(self, h, base_cond, taus):
        """Apply the shared block once per depth coordinate; keep every state."""
        states = [h]
        for tau in taus:
            cond = add(base_cond, self.cond.tau_term(float(tau)))
            h = block_rows_forward(h, self.block, cond)
            states.append(h)
        return states

    def rollout(self, z, delta, y, w, steps=None):
        """Depth trace per the iteration contract: K states from K-1 updates.

        States pair with the grid coordinates; state k enters the update
        taken at coordinate tau_k.
        """
        steps = self.cfg.rollout_steps if steps is None else steps
        grid = depth_grid(steps)
        base = self.cond.embed_base(delta, y, w)
        states = self._unroll(self._embed_input(z), base, grid[:-1])
        return DepthTrace(states, grid)

    def _forward_states(self, z, delta, y, w):
        """Rollout used for training; returns (supervised states, final state).

        In "full" mode the block runs once per grid coordinate and the K
        post-update states are supervised. In "truncated" mode only K-1
        updates run and the K states starting at the embedding are used.
        """
        grid = depth_grid(self.cfg.rollout_steps)
        base = self.cond.embed_base(delta, y, w)
        h0 = self._embed_input(z)
        if self.cfg.rollout_mode == "full":
            states = self._unroll(h0, base, grid)
            return states[1:], states[-1]
        states = self._unroll(h0, base, grid[:-1])
        return states, states[-1]

    def predict_velocity_t(self, z, delta, y, w):
        _, final = self._forward_states(z, delta, y, w)
        return add(matmul(final, self.head_w), self.head_b)

    def predict_velocity(self, z, delta, y, w):
        self.eval_count += 1
        with no_tape():
            return self.predict_velocity_t(z, delta, y, w).data

    def one_step(self, z, y, w):
        """Student one-step sample over the full interval: z - F(z, 1, y, w)."""
        self.eval_count += 1
        with no_tape():
            v = self.predict_velocity_t(z, 1.0, y, w).data
        return np.asarray(z, dtype=self.dtype) - v

    def project_step(self, i, state):
        """Lift supervised state i into the teacher width."""
        if not 0 <= i < self.cfg.rollout_steps:
            raise ValueError(f"projection index {i} outside [0, {self.cfg.rollout_steps})")
        if self.projections is None:
            return state
        return matmul(state, self.projections[i])
