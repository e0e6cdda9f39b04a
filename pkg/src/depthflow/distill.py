"""Data-free depth distillation: losses, batch sampling, and the train loop.

The student never sees a data distribution. Every batch is prior noise plus
online-sampled conditioning (class labels, guidance weights, and the fixed
one-step interval), and the teacher's detached outputs are the only targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import AdamW, TrainConfig, TrainingError, lr_schedule
from .student import StudentConfig, StudentModel, layer_map
from .tensor import NonFiniteError, Tape, Tensor, add, backward, matmul, mse, scale


@dataclass
class DistillBatch:
    """One data-free training batch: noise, labels, interval, guidance."""

    z: np.ndarray
    y: np.ndarray
    t: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = self.z.shape[0]
        if self.z.ndim != 2:
            raise ValueError("z must be [batch, dim]")
        for name in ("y", "t", "w"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have batch length {n}, got {arr.shape}")


def sample_batch(rng, batch, data_dim, n_classes, w_low=1.0, w_high=2.0, sample_delta=False):
    """Draw a fresh DistillBatch; t is pinned at 1 unless interval sampling is on."""
    z = rng.standard_normal((batch, data_dim))
    y = rng.integers(0, n_classes, batch)
    t = rng.uniform(0.05, 1.0, batch) if sample_delta else np.ones(batch)
    w = rng.uniform(w_low, w_high, batch)
    return DistillBatch(z=z, y=y, t=t, w=w)


def loss_output(v_student, v_teacher):
    """Mean squared gap between the velocity predictions; teacher detached."""
    target = v_teacher.detach() if isinstance(v_teacher, Tensor) else Tensor(v_teacher)
    return mse(v_student, target)


def loss_patches(model, student_states, teacher_states):
    """Average projected-feature distance to the mapped teacher layers.

    Term i compares projection i of supervised state i against teacher state
    m(i); each term is a mean over its elements and the K terms average.
    """
    steps = model.cfg.rollout_steps
    if len(student_states) != steps:
        raise ValueError(f"expected {steps} supervised states, got {len(student_states)}")
    if len(teacher_states) != model.cfg.teacher_depth + 1:
        raise ValueError(
            f"teacher trace must hold {model.cfg.teacher_depth + 1} states, got {len(teacher_states)}"
        )
    total = None
    for i in range(steps):
        target = teacher_states[layer_map(i, steps, model.cfg.teacher_depth)]
        target = target.data if isinstance(target, Tensor) else np.asarray(target)
        term = mse(model.project_step(i, student_states[i]), Tensor(target))
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / steps)


def loss_total(l_output, l_patches, lam):
    """Combined objective, exactly l_output + lam * l_patches."""
    return add(l_output, scale(l_patches, lam))


def distill_train(teacher, cfg: StudentConfig, train: TrainConfig, seed, dtype="float32",
                  sample_delta=False, w_low=1.0, w_high=2.0):
    """Distill the frozen teacher into a fresh student; returns (model, rows).

    Per step: sample a DistillBatch, collect the teacher's depth trace and
    velocity (detached), roll the student out, combine the two losses, and
    take one optimizer step. Deterministic given (config, seed); the teacher
    is never mutated.
    """
    if teacher.cfg.depth != cfg.teacher_depth or teacher.cfg.hidden != cfg.teacher_hidden:
        raise ValueError("student config does not describe this teacher's layout")
    if teacher.cfg.n_classes != cfg.n_classes:
        raise ValueError("class counts differ between teacher and student")
    init_rng = np.random.default_rng([seed, 0x57])
    data_rng = np.random.default_rng([seed, 0xDA7A])
    model = StudentModel(cfg, init_rng, dtype)
    opt = AdamW(model.named_parameters(), train)
    rows = []
    for step in range(train.total_steps):
        lr = lr_schedule(step, train)
        batch = sample_batch(
            data_rng, train.batch_size, cfg.data_dim, cfg.n_classes,
            w_low=w_low, w_high=w_high, sample_delta=sample_delta,
        )
        trace, v_teacher = teacher.collect_depth_trace(batch.z, batch.t, batch.y, batch.w)
        try:
            with Tape():
                states, final = model._forward_states(batch.z, batch.t, batch.y, batch.w)
                v_student = add(matmul(final, model.head_w), model.head_b)
                l_out = loss_output(v_student, v_teacher.astype(model.dtype))
                l_p = loss_patches(model, states, [s.astype(model.dtype) for s in trace.states])
                loss = loss_total(l_out, l_p, train.lambda_patches)
            grads = backward(loss)
        except NonFiniteError as err:
            raise TrainingError(f"depth distillation diverged at step {step}: {err}") from err
        opt.step(grads, lr)
        if step % train.log_every == 0 or step == train.total_steps - 1:
            rows.append({
                "step": step,
                "lr": float(lr),
                "loss_output": l_out.item(),
                "loss_patches": l_p.item(),
                "loss_total": loss.item(),
            })
    return model, rows
