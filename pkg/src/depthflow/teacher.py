"""Teacher side: base velocity field, its one-step flow-map distillate, and
the depth-feature taps the student trains against.

Conventions, fixed once and used everywhere: t=1 is noise, t=0 is data,
trajectories integrate t from 1 down to 0, and the one-step map is
`f(z, delta) = z - delta * F(z, delta)` where F is the learned mean velocity
over the interval [1-delta, 1]. F's consistency target is
`u(f(z, delta), 1-delta) - delta * dF/ddelta`, with the delta derivative
estimated by central finite differences and the whole target treated as a
constant (no gradient flows into its construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    BlockConfig,
    BlockParams,
    CondConfig,
    ConditionEmbedder,
    block_rows_forward,
)
from .optim import AdamW, TrainConfig, TrainingError, lr_schedule
from .tensor import NonFiniteError, Tape, Tensor, add, backward, matmul, mse, no_tape


@dataclass(frozen=True)
class FieldConfig:
    """Shared layout of the base field and the flow-map teacher."""

    data_dim: int = 2
    hidden: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    depth: int = 8
    cond_dim: int = 64
    n_classes: int = 8
    condition_on_w: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.data_dim < 1:
            raise ValueError("data_dim must be >= 1")
        BlockConfig(self.hidden, self.heads, self.mlp_ratio, self.cond_dim)

    @property
    def block(self):
        return BlockConfig(self.hidden, self.heads, self.mlp_ratio, self.cond_dim)


@dataclass
class DepthTrace:
    """Hidden states along depth with their normalized coordinates."""

    states: list
    coords: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.coords):
            raise ValueError("one coordinate per state")

    def __len__(self):
        return len(self.states)


class _Backbone:
    """Embedding, a stack of conditioned blocks, and a linear velocity head."""

    def __init__(self, cfg: FieldConfig, rng, dtype):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        d, h = cfg.data_dim, cfg.hidden
        self.embed_w = Tensor(
            (rng.standard_normal((d, h)) / np.sqrt(d)).astype(self.dtype), requires_grad=True
        )
        self.embed_b = Tensor(np.zeros(h, dtype=self.dtype), requires_grad=True)
        # zero head: a fresh field predicts zero velocity everywhere
        self.head_w = Tensor(np.zeros((h, d), dtype=self.dtype), requires_grad=True)
        self.head_b = Tensor(np.zeros(d, dtype=self.dtype), requires_grad=True)
        self.cond = ConditionEmbedder(
            CondConfig(cfg.cond_dim, cfg.n_classes, use_w=cfg.condition_on_w), rng, self.dtype
        )
        self.blocks = [BlockParams(cfg.block, rng, self.dtype) for _ in range(cfg.depth)]
        self.eval_count = 0

    def named_parameters(self):
        out = {
            "embed.w": self.embed_w,
            "embed.b": self.embed_b,
            "head.w": self.head_w,
            "head.b": self.head_b,
        }
        out.update(self.cond.named("cond."))
        for i, bp in enumerate(self.blocks):
            out.update(bp.named(f"blocks.{i:02d}."))
        return out

    def param_count(self):
        return sum(t.size for t in self.named_parameters().values())

    def config_dict(self):
        from .serialize import model_config_dict

        return model_config_dict(self)

    def _forward(self, x, cond, collect=False):
        """Run the stack on rows `x` [batch, data_dim]; optionally keep states."""
        h = add(matmul(Tensor(np.asarray(x, dtype=self.dtype)), self.embed_w), self.embed_b)
        states = [h] if collect else None
        for bp in self.blocks:
            h = block_rows_forward(h, bp, cond)
            if collect:
                states.append(h)
        v = add(matmul(h, self.head_w), self.head_b)
        return v, states


class VelocityField(_Backbone):
    """Instantaneous velocity u(x, t, y), trained by conditional flow matching."""

    kind = "velocity-field"

    def __init__(self, cfg: FieldConfig, rng, dtype="float32"):
        if cfg.condition_on_w:
            raise ValueError("the base field handles w via guidance, not as an input")
        super().__init__(cfg, rng, dtype)

    def velocity_t(self, x, t, y):
        """Tensor-valued forward for training (records onto any active tape)."""
        cond = self.cond.embed_condition(t, y)
        v, _ = self._forward(x, cond)
        return v

    def velocity(self, x, t, y):
        """Detached single-pass evaluation."""
        self.eval_count += 1
        with no_tape():
            return self.velocity_t(x, t, y).data

    def guided_velocity(self, x, t, y, w=1.0):
        """Classifier-free guided velocity: u_uncond + w * (u_cond - u_uncond).

        A scalar w == 1 short-circuits to the conditional pass.
        """
        self.eval_count += 1
        with no_tape():
            if np.ndim(w) == 0 and float(w) == 1.0:
                return self.velocity_t(x, t, y).data
            y = np.asarray(y)
            null = np.full_like(y, self.cfg.n_classes)
            u_c = self.velocity_t(x, t, y).data
            u_u = self.velocity_t(x, t, null).data
            w_col = np.asarray(w, dtype=u_c.dtype).reshape(-1, 1) if np.ndim(w) else w
            return u_u + w_col * (u_c - u_u)


class FlowMapModel(_Backbone):
    """Mean velocity F(z, delta, y, w); one-step sampling is z - delta * F."""

    kind = "flow-map"

    def __init__(self, cfg: FieldConfig, rng, dtype="float32"):
        if not cfg.condition_on_w:
            raise ValueError("the flow map conditions on w directly")
        super().__init__(cfg, rng, dtype)

    def mean_velocity_t(self, z, delta, y, w, collect=False):
        cond = self.cond.embed_condition(delta, y, w)
        return self._forward(z, cond, collect=collect)

    def mean_velocity(self, z, delta, y, w):
        self.eval_count += 1
        with no_tape():
            return self.mean_velocity_t(z, delta, y, w)[0].data

    def one_step(self, z, delta, y, w):
        """Sample by the defining identity f(z, delta) = z - delta * F(z, delta)."""
        self.eval_count += 1
        with no_tape():
            f = self.mean_velocity_t(z, delta, y, w)[0].data
        z = np.asarray(z, dtype=self.dtype)
        d = np.asarray(delta, dtype=self.dtype)
        d = d.reshape(-1, 1) if d.ndim == 1 else d
        return z - d * f

    def collect_depth_trace(self, z, delta, y, w):
        """One forward pass; returns every post-block state and the velocity.

        Re-running block l on states[l-1] (same batch, same condition)
        reproduces states[l] bitwise.
        """
        self.eval_count += 1
        with no_tape():
            v, states = self.mean_velocity_t(z, delta, y, w, collect=True)
        coords = np.arange(self.cfg.depth + 1) / self.cfg.depth
        return DepthTrace([s.data for s in states], coords), v.data


def integrate_ode(field, z, steps, y, w=1.0, method="euler"):
    """Reference sampler: integrate dx/dt = u from t=1 down to t=0.

    This is the oracle every one-step model is judged against. `field` must
    expose guided_velocity; with a zero field the output equals z.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    x = np.array(z, dtype=np.float64, copy=True)
    dt = 1.0 / steps

    def u(state, time):
        return np.asarray(field.guided_velocity(state, time, y, w), dtype=np.float64)

    for i in range(steps):
        t = 1.0 - i * dt
        if method == "euler":
            x = x - dt * u(x, t)
        else:
            k1 = u(x, t)
            k2 = u(x - 0.5 * dt * k1, t - 0.5 * dt)
            k3 = u(x - 0.5 * dt * k2, t - 0.5 * dt)
            k4 = u(x - dt * k3, t - dt)
            x = x - (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def freeflow_target(model, field, z, delta, y, w, fd_step=1e-3):
    """Consistency target for the mean velocity at (z, delta).

    Evaluates the instantaneous field at the predicted state f(z, delta) and
    subtracts delta times the finite-difference delta-derivative of F. The
    stencil is shifted so both probes stay inside (0, 1]. Built entirely from
    detached evaluations, so it is constant no matter what tape is active.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0.0) or np.any(delta > 1.0):
        raise ValueError("delta must lie in (0, 1]")
    z = np.asarray(z)
    col = delta.reshape(-1, 1)

    f_state = z - col * model.mean_velocity(z, delta, y, w)
    u_at = field.guided_velocity(f_state, 1.0 - delta, y, w)

    hi = np.minimum(delta + fd_step, 1.0)
    lo = hi - 2.0 * fd_step
    if np.any(lo <= 0.0):
        raise ValueError(f"fd_step {fd_step} too large for the smallest delta")
    df = (model.mean_velocity(z, hi, y, w) - model.mean_velocity(z, lo, y, w)) / (2.0 * fd_step)
    return np.asarray(u_at - col * df, dtype=model.dtype)


def _log_row(rows, step, lr, **losses):
    rows.append({"step": step, "lr": float(lr), **{k: float(v) for k, v in losses.items()}})


def _should_log(step, total, every):
    return step % every == 0 or step == total - 1


def train_base_velocity(dist, cfg: FieldConfig, train: TrainConfig, seed, dtype="float32",
                        label_drop=0.1):
    """Fit the instantaneous field by regressing interpolant velocities.

    Along x_t = (1-t) x_data + t z the displacement z - x_data is the exact
    velocity of the interpolation; the field learns its conditional mean.
    A fraction of labels drops to the null token so guided evaluation has an
    unconditional branch to lean on. Returns the field and the metrics rows.
    """
    if dist.n_components != cfg.n_classes:
        raise ValueError("class count must match the mixture component count")
    init_rng = np.random.default_rng([seed, 0xBA5E])
    data_rng = np.random.default_rng([seed, 0xDA7A])
    model = VelocityField(cfg, init_rng, dtype)
    opt = AdamW(model.named_parameters(), train)
    rows = []
    for step in range(train.total_steps):
        lr = lr_schedule(step, train)
        x, y = dist.sample(data_rng, train.batch_size)
        z = data_rng.standard_normal((train.batch_size, cfg.data_dim))
        t = data_rng.uniform(0.0, 1.0, train.batch_size)
        drop = data_rng.uniform(size=train.batch_size) < label_drop
        y = np.where(drop, cfg.n_classes, y)
        x_t = (1.0 - t[:, None]) * x + t[:, None] * z
        target = (z - x).astype(model.dtype)
        try:
            with Tape():
                u = model.velocity_t(x_t, t, y)
                loss = mse(u, Tensor(target))
            grads = backward(loss)
        except NonFiniteError as err:
            raise TrainingError(f"base training diverged at step {step}: {err}") from err
        opt.step(grads, lr)
        if _should_log(step, train.total_steps, train.log_every):
            _log_row(rows, step, lr, loss=loss.item())
    return model, rows


def freeflow_distill(field, cfg: FieldConfig, train: TrainConfig, seed, dtype="float32",
                     delta_min=0.05, pin_fraction=0.25, fd_step=1e-3,
                     w_low=1.0, w_high=2.0, ramp_fraction=0.5):
    """Distill the iterative field into a one-step flow map.

    Trains F(z, delta, y, w) against its own stop-gradient consistency
    target; only prior noise and sampled conditioning enter. The interval
    grows over training: delta's upper bound ramps linearly from delta_min
    to 1 across `ramp_fraction` of the run, because bootstrapping the full
    interval from scratch is unstable (the target queries the field far off
    its data manifold). After the ramp, delta is uniform on [delta_min, 1]
    except for a pinned fraction of batches run entirely at the current
    maximum, which ends at delta=1, the deployed one-step setting.
    """
    init_rng = np.random.default_rng([seed, 0xF10])
    data_rng = np.random.default_rng([seed, 0xF1D])
    model = FlowMapModel(cfg, init_rng, dtype)
    opt = AdamW(model.named_parameters(), train)
    rows = []
    ramp = max(1, int(ramp_fraction * train.total_steps))
    for step in range(train.total_steps):
        lr = lr_schedule(step, train)
        hi = delta_min + (1.0 - delta_min) * min(1.0, step / ramp)
        z = data_rng.standard_normal((train.batch_size, cfg.data_dim))
        y = data_rng.integers(0, cfg.n_classes, train.batch_size)
        w = data_rng.uniform(w_low, w_high, train.batch_size)
        if data_rng.uniform() < pin_fraction:
            delta = np.full(train.batch_size, hi)
        else:
            delta = data_rng.uniform(delta_min, hi, train.batch_size)
        try:
            target = freeflow_target(model, field, z, delta, y, w, fd_step=fd_step)
            with Tape():
                f_pred = model.mean_velocity_t(z, delta, y, w)[0]
                loss = mse(f_pred, Tensor(target))
            grads = backward(loss)
        except NonFiniteError as err:
            raise TrainingError(f"flow-map distillation diverged at step {step}: {err}") from err
        opt.step(grads, lr)
        if _should_log(step, train.total_steps, train.log_every):
            _log_row(rows, step, lr, loss=loss.item())
    return model, rows
