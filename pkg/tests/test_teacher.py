import numpy as np
import pytest

from depthflow.optim import TrainConfig
from depthflow.teacher import (
    FieldConfig,
    FlowMapModel,
    VelocityField,
    freeflow_target,
    integrate_ode,
    train_base_velocity,
)
from depthflow.mixture import ring_mixture
from depthflow.metrics import energy_distance
from depthflow.tensor import Tape, Tensor, backward, mse


def tiny_cfg(**kw):
    base = dict(data_dim=2, hidden=8, heads=2, mlp_ratio=2, depth=2, cond_dim=8,
                n_classes=4, condition_on_w=False)
    base.update(kw)
    return FieldConfig(**base)


@pytest.fixture
def field(rng):
    return VelocityField(tiny_cfg(), rng, "float64")


@pytest.fixture
def flow_map(rng):
    return FlowMapModel(tiny_cfg(condition_on_w=True), rng, "float64")


def randomize(model, rng, scale=0.3):
    """Give every parameter non-trivial values so the model acts."""
    for name, t in model.named_parameters().items():
        t.data = (rng.standard_normal(t.shape) * scale / np.sqrt(max(1, t.shape[0]))).astype(t.dtype)
    return model


class TestIntegrateOde:
    def test_zero_field_returns_input(self, field, rng):
        z = rng.standard_normal((6, 2))
        y = np.zeros(6, dtype=int)
        for steps in (1, 13, 64):
            out = integrate_ode(field, z, steps, y)
            assert np.array_equal(out, z)

    def test_constant_field_closed_form(self, field, rng):
        c = np.array([0.7, -0.3])
        field.head_b.data = c.copy()
        z = rng.standard_normal((5, 2))
        y = np.zeros(5, dtype=int)
        for steps in (1, 8, 77):
            out = integrate_ode(field, z, steps, y)
            assert np.allclose(out, z - c, atol=1e-12)
        fine = integrate_ode(field, z, 10_000, y)
        assert np.allclose(integrate_ode(field, z, 8, y), fine, atol=1e-9)

    def test_rk4_matches_euler_on_trained_like_field(self, field, rng):
        randomize(field, rng)
        z = rng.standard_normal((4, 2))
        y = np.zeros(4, dtype=int)
        euler = integrate_ode(field, z, 512, y, method="euler")
        rk4 = integrate_ode(field, z, 64, y, method="rk4")
        assert np.allclose(euler, rk4, atol=1e-3)

    def test_invalid_args(self, field, rng):
        z = rng.standard_normal((2, 2))
        with pytest.raises(ValueError):
            integrate_ode(field, z, 0, np.zeros(2, dtype=int))
        with pytest.raises(ValueError):
            integrate_ode(field, z, 4, np.zeros(2, dtype=int), method="heun")


class TestGuidance:
    def test_unit_weight_is_conditional_pass(self, field, rng):
        randomize(field, rng)
        x = rng.standard_normal((3, 2))
        y = np.array([0, 1, 2])
        assert np.array_equal(field.guided_velocity(x, 0.4, y, 1.0),
                              field.velocity(x, 0.4, y))

    def test_guidance_interpolates(self, field, rng):
        randomize(field, rng)
        x = rng.standard_normal((3, 2))
        y = np.array([0, 1, 2])
        null = np.full(3, field.cfg.n_classes)
        u_c = field.velocity(x, 0.4, y)
        u_u = field.velocity(x, 0.4, null)
        got = field.guided_velocity(x, 0.4, y, 2.0)
        assert np.allclose(got, u_u + 2.0 * (u_c - u_u), atol=1e-12)


class TestFlowMapModel:
    def test_one_step_identity_with_mean_velocity(self, flow_map, rng):
        randomize(flow_map, rng)
        z = rng.standard_normal((5, 2))
        y = np.zeros(5, dtype=int)
        delta = rng.uniform(0.1, 1.0, 5)
        f = flow_map.one_step(z, delta, y, 1.5)
        v = flow_map.mean_velocity(z, delta, y, 1.5)
        assert np.array_equal(f, z - delta[:, None] * v)

    def test_depth_trace_layout(self, rng):
        model = FlowMapModel(tiny_cfg(condition_on_w=True, depth=1), rng, "float64")
        z = rng.standard_normal((3, 2))
        trace, v = model.collect_depth_trace(z, 1.0, np.zeros(3, dtype=int), 1.0)
        assert len(trace) == 2
        assert np.allclose(trace.coords, [0.0, 1.0])
        assert v.shape == (3, 2)

    def test_trace_head_equals_forward_bitwise(self, flow_map, rng):
        randomize(flow_map, rng)
        z = rng.standard_normal((4, 2))
        y = np.zeros(4, dtype=int)
        trace, v = flow_map.collect_depth_trace(z, 1.0, y, 1.5)
        direct = flow_map.mean_velocity(z, 1.0, y, 1.5)
        assert np.array_equal(v, direct)
        head = trace.states[-1] @ flow_map.head_w.data + flow_map.head_b.data
        assert np.array_equal(head, v)

    def test_trace_block_rederivation_bitwise(self, flow_map, rng):
        from depthflow.blocks import block_rows_forward

        randomize(flow_map, rng)
        z = rng.standard_normal((4, 2))
        y = np.array([0, 1, 2, 3])
        trace, _ = flow_map.collect_depth_trace(z, 1.0, y, 1.5)
        cond = flow_map.cond.embed_condition(1.0, y, 1.5)
        for l, bp in enumerate(flow_map.blocks):
            redo = block_rows_forward(Tensor(trace.states[l]), bp, cond)
            assert np.array_equal(redo.data, trace.states[l + 1]), f"layer {l + 1}"

    def test_trace_deterministic(self, flow_map, rng):
        randomize(flow_map, rng)
        z = rng.standard_normal((3, 2))
        y = np.zeros(3, dtype=int)
        t1, v1 = flow_map.collect_depth_trace(z, 1.0, y, 1.0)
        t2, v2 = flow_map.collect_depth_trace(z, 1.0, y, 1.0)
        assert np.array_equal(v1, v2)
        for a, b in zip(t1.states, t2.states):
            assert np.array_equal(a, b)


class TestFreeflowTarget:
    def test_zero_student_target_is_field_at_input(self, field, flow_map, rng):
        randomize(field, rng)
        z = rng.standard_normal((4, 2))
        y = np.zeros(4, dtype=int)
        delta = np.full(4, 0.5)
        # fresh flow map predicts exactly zero, so f = z and dF/ddelta = 0
        target = freeflow_target(flow_map, field, z, delta, y, 1.0)
        expected = field.guided_velocity(z, 1.0 - delta, y, 1.0)
        assert np.allclose(target, expected, atol=1e-12)

    def test_constant_field_target_independent_of_delta(self, field, flow_map, rng):
        c = np.array([0.4, -0.9])
        field.head_b.data = c.copy()
        z = rng.standard_normal((3, 2))
        y = np.zeros(3, dtype=int)
        targets = [
            freeflow_target(flow_map, field, z, np.full(3, d), y, 1.0)
            for d in (0.1, 0.5, 1.0)
        ]
        for t in targets:
            assert np.allclose(t, c, atol=1e-12)

    def test_target_constant_under_active_tape(self, field, flow_map, rng):
        randomize(field, rng)
        randomize(flow_map, rng)
        z = rng.standard_normal((4, 2))
        y = np.zeros(4, dtype=int)
        delta = rng.uniform(0.2, 0.9, 4)
        plain = freeflow_target(flow_map, field, z, delta, y, 1.3)
        with Tape() as tape:
            taped = freeflow_target(flow_map, field, z, delta, y, 1.3)
            assert not tape.nodes  # nothing recorded: the target is detached
        assert np.array_equal(plain, taped)

    def test_no_gradient_into_field_or_target_model(self, field, flow_map, rng):
        randomize(field, rng)
        randomize(flow_map, rng)
        z = rng.standard_normal((4, 2))
        y = np.zeros(4, dtype=int)
        delta = np.full(4, 0.7)
        with Tape():
            target = freeflow_target(flow_map, field, z, delta, y, 1.0)
            pred = flow_map.mean_velocity_t(z, delta, y, np.full(4, 1.0))[0]
            loss = mse(pred, Tensor(target))
        grads = backward(loss)
        field_params = set(map(id, field.named_parameters().values()))
        assert not field_params & set(map(id, grads))

    def test_delta_domain(self, field, flow_map, rng):
        z = rng.standard_normal((2, 2))
        y = np.zeros(2, dtype=int)
        for bad in (0.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                freeflow_target(flow_map, field, z, np.full(2, bad), y, 1.0)


class TestBaseTraining:
    def test_untrained_field_samples_match_prior(self, rng):
        dist = ring_mixture()
        cfg = tiny_cfg(n_classes=8)
        model = VelocityField(cfg, rng, "float64")
        z = rng.standard_normal((2000, 2))
        y = rng.integers(0, 8, 2000)
        samples = integrate_ode(model, z, 16, y)
        prior = rng.standard_normal((2000, 2))
        assert energy_distance(samples, prior) < 0.05

    def test_short_run_decreases_loss_and_is_deterministic(self):
        dist = ring_mixture(components=4)
        cfg = tiny_cfg(hidden=16, cond_dim=8, depth=2, n_classes=4)
        train = TrainConfig(total_steps=120, batch_size=64, lr=3e-3, warmup_steps=20,
                            log_every=20)
        m1, rows1 = train_base_velocity(dist, cfg, train, seed=11)
        m2, rows2 = train_base_velocity(dist, cfg, train, seed=11)
        assert rows1 == rows2
        for a, b in zip(m1.named_parameters().values(), m2.named_parameters().values()):
            assert np.array_equal(a.data, b.data)
        assert rows1[-1]["loss"] < rows1[0]["loss"]

    def test_class_count_must_match(self, rng):
        dist = ring_mixture(components=8)
        cfg = tiny_cfg(n_classes=4)
        with pytest.raises(ValueError):
            train_base_velocity(dist, cfg, TrainConfig(total_steps=1, batch_size=4, lr=1e-3),
                                seed=0)
