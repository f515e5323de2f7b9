"""Layers, initialization, Adam schedule, and the checkpoint container."""

import numpy as np
import pytest

from gradcheck import check_gradients

import fus3d.tensor as T
from fus3d.nn import (
    Conv2d,
    Linear,
    LSTMCell,
    Module,
    Parameter,
    kaiming_uniform,
    load_checkpoint,
    lstm_cell,
    orthogonal,
    save_checkpoint,
)
from fus3d.optim import Adam
from fus3d.tensor import Tensor, backward


class TestLayers:
    def test_linear_shapes_and_values(self):
        rng = np.random.default_rng(0)
        layer = Linear(3, 2, rng)
        x = Tensor(rng.standard_normal((5, 3)))
        out = layer(x)
        assert out.shape == (5, 2)
        np.testing.assert_allclose(
            out.data, x.data @ layer.weight.data.T + layer.bias.data, atol=1e-12
        )

    def test_conv_layer_shapes(self):
        rng = np.random.default_rng(1)
        layer = Conv2d(2, 4, 3, rng, stride=2, padding=1)
        out = layer(Tensor(rng.standard_normal((3, 2, 8, 8))))
        assert out.shape == (3, 4, 4, 4)

    def test_lstm_cell_gradients(self):
        rng = np.random.default_rng(2)
        shapes = [(2, 3), (2, 4), (2, 4), (16, 3), (16, 4), (16,)]
        arrays = [rng.uniform(-0.5, 0.5, s) for s in shapes]

        def op(t):
            h, c = lstm_cell(t[0], t[1], t[2], t[3], t[4], t[5])
            return T.concat([h, c], axis=1)

        check_gradients(op, arrays)

    def test_lstm_state_shapes(self):
        rng = np.random.default_rng(3)
        cell = LSTMCell(6, 4, rng)
        h, c = cell.initial_state(batch=3)
        h2, c2 = cell(Tensor(rng.standard_normal((3, 6))), h, c)
        assert h2.shape == (3, 4) and c2.shape == (3, 4)
        assert np.abs(h2.data).max() > 0.0

    def test_orthogonal_init(self):
        rng = np.random.default_rng(4)
        q = orthogonal(rng, (16, 4))
        np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-10)

    def test_kaiming_bound(self):
        rng = np.random.default_rng(5)
        w = kaiming_uniform(rng, (64, 9), fan_in=9)
        assert np.abs(w).max() <= np.sqrt(6.0 / 9)


class TestModuleTree:
    def test_named_parameters_are_unique_dotted_paths(self):
        rng = np.random.default_rng(6)

        class Child(Module):
            def __init__(self):
                self.lin = Linear(2, 2, rng)

        class Root(Module):
            def __init__(self):
                self.a = Child()
                self.blocks = [Child(), Child()]
                self.w = Parameter(np.zeros(3))

        root = Root()
        names = [n for n, _ in root.named_parameters()]
        assert "a.lin.weight" in names
        assert "blocks.1.lin.bias" in names
        assert "w" in names
        assert len(names) == len(set(names))

    def test_state_round_trip(self):
        rng = np.random.default_rng(7)
        model = Linear(3, 3, rng)
        state = model.state_arrays()
        other = Linear(3, 3, np.random.default_rng(8))
        other.load_state_arrays(state)
        np.testing.assert_array_equal(other.weight.data, model.weight.data)


class TestAdam:
    def test_descent_direction(self):
        p = Parameter(np.array([1.0]), name="p")
        opt = Adam([p], lr=0.1)
        p.tensor.grad = np.array([1.0])
        opt.step()
        assert p.data[0] < 1.0

    def test_lr_schedule_paper_values(self):
        opt = Adam([Parameter(np.zeros(1), name="p")], lr=1e-5)
        assert opt.lr == 1e-5
        opt.set_epoch(99)
        assert opt.lr == 1e-5
        opt.set_epoch(100)
        assert opt.lr == pytest.approx(8e-6)
        opt.set_epoch(250)
        assert opt.lr == pytest.approx(6.4e-6)

    def test_missing_grad_is_an_error(self):
        opt = Adam([Parameter(np.zeros(1), name="p")], lr=0.1)
        with pytest.raises(RuntimeError, match="no gradient"):
            opt.step()

    def test_quadratic_bowl_convergence(self):
        # minimize sum((x - c)^2); closed-form minimum at c
        rng = np.random.default_rng(9)
        c = rng.standard_normal(4)
        p = Parameter(np.zeros(4), name="x")
        opt = Adam([p], lr=0.05)
        for _ in range(2000):
            opt.zero_grad()
            diff = T.sub(p.tensor, c)
            backward(T.tensor_sum(T.mul(diff, diff)))
            opt.step()
        assert float(np.abs(p.data - c).max()) < 1e-6

    def test_state_round_trip_updates_identically(self):
        rng = np.random.default_rng(10)

        def make():
            r = np.random.default_rng(11)
            model = Linear(3, 2, r)
            return model, Adam(model.parameters(), lr=1e-3)

        model_a, opt_a = make()
        model_b, opt_b = make()
        x = rng.standard_normal((4, 3))

        def one_step(model, opt):
            opt.zero_grad()
            out = model(Tensor(x))
            backward(T.tensor_sum(T.mul(out, out)))
            opt.step()

        one_step(model_a, opt_a)
        # transfer a's state to b, then both take the same second step
        model_b.load_state_arrays(model_a.state_arrays())
        opt_b.load_state_arrays(opt_a.state_arrays())
        one_step(model_a, opt_a)
        one_step(model_b, opt_b)
        np.testing.assert_array_equal(model_a.weight.data, model_b.weight.data)


class TestCheckpointFormat:
    def test_round_trip_with_config(self, tmp_path):
        rng = np.random.default_rng(12)
        arrays = {
            "enc.weight": rng.standard_normal((3, 2, 2, 2)),
            "head.bias": rng.standard_normal(5),
            "scalar": np.array(3.5),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, config={"scale": "toy", "s": "8"})
        loaded, config = load_checkpoint(path)
        assert config == {"scale": "toy", "s": "8"}
        assert set(loaded) == set(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])

    def test_magic_and_layout(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"w": np.zeros((2, 2))}, config={})
        blob = path.read_bytes()
        assert blob[:4] == b"CKPT"
        assert int.from_bytes(blob[4:8], "little") == 1

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)
