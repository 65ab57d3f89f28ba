"""Engine-level tests: forward semantics plus finite-difference oracles."""

import numpy as np
import pytest

from duomotion import autodiff as ad
from duomotion.autodiff import Tensor
from duomotion.nn import (LayerNorm, Linear, Module, Parameter,
                          TransformerBlock, sinusoidal_positions)
from duomotion.optim import Adam, NonFiniteGradient, grad_check


def rng64(seed=0):
    return np.random.default_rng(seed)


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestLinear:
    def test_zero_input_gives_bias(self):
        rng = rng64()
        lin = Linear(3, 4, rng, dtype=np.float64)
        out = lin(t64(np.zeros((2, 5, 3))))
        assert np.allclose(out.data, 0.0)  # bias starts at zero

    def test_identity_passes_weights_through(self):
        rng = rng64()
        lin = Linear(2, 2, rng, dtype=np.float64)
        lin.weight.data = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = lin(t64(np.eye(2)[None]))
        assert np.allclose(out.data[0], [[1.0, 2.0], [3.0, 4.0]])

    def test_shape_mismatch_raises(self):
        lin = Linear(3, 4, rng64())
        with pytest.raises(ValueError, match="width"):
            lin(t64(np.zeros((2, 5, 7))))

    def test_gradients_match_finite_differences(self):
        rng = rng64(1)
        lin = Linear(4, 3, rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 5, 4)))
        tensors = {"weight": lin.weight, "bias": lin.bias, "x": x}

        def loss():
            return (lin(x) * Tensor(np.arange(3.0) + 0.5)).mean()

        report = grad_check(loss, tensors)
        assert report.ok, str(report)


class TestLayerNorm:
    def test_constant_row_normalizes_to_zero(self):
        ln = LayerNorm(3, dtype=np.float64)
        out = ln(t64([[4.2, 4.2, 4.2]]))
        assert np.allclose(out.data, 0.0)

    def test_unit_moments(self):
        ln = LayerNorm(3, dtype=np.float64, eps=1e-12)
        out = ln(t64([[1.0, 2.0, 3.0]])).data
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-6

    def test_zero_width_rejected(self):
        with pytest.raises(ValueError):
            LayerNorm(0)
        with pytest.raises(ValueError):
            ad.layer_norm(t64(np.ones((2, 3))), t64(np.ones(3)), t64(np.zeros(3)), eps=0.0)

    def test_gradients_match_finite_differences(self):
        rng = rng64(2)
        ln = LayerNorm(6, dtype=np.float64)
        ln.gamma.data = rng.standard_normal(6)
        ln.beta.data = rng.standard_normal(6)
        x = Tensor(rng.standard_normal((3, 6)))
        w = Tensor(rng.standard_normal((3, 6)))

        def loss():
            return (ln(x) * w).mean()

        report = grad_check(loss, {"gamma": ln.gamma, "beta": ln.beta, "x": x})
        assert report.ok, str(report)


class TestAttention:
    def test_single_key_returns_value(self):
        rng = rng64(3)
        q = Tensor(rng.standard_normal((2, 2, 1, 4)))
        k = Tensor(rng.standard_normal((2, 2, 1, 4)))
        v = Tensor(rng.standard_normal((2, 2, 1, 4)))
        out = ad.attention(q, k, v)
        assert np.allclose(out.data, v.data, atol=1e-12)

    def test_identical_keys_average_values(self):
        rng = rng64(4)
        q = Tensor(rng.standard_normal((1, 1, 5, 4)))
        k = Tensor(np.tile(rng.standard_normal((1, 1, 1, 4)), (1, 1, 5, 1)))
        v = Tensor(rng.standard_normal((1, 1, 5, 4)))
        out = ad.attention(q, k, v)
        assert np.allclose(out.data, v.data.mean(axis=2, keepdims=True), atol=1e-10)

    def test_weights_sum_to_one(self):
        rng = rng64(5)
        scores = Tensor(rng.standard_normal((2, 3, 4, 4)))
        w = ad.softmax(scores).data
        assert (w >= 0).all()
        assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-6

    def test_empty_sequence_rejected(self):
        q = Tensor(np.zeros((1, 1, 0, 4)))
        with pytest.raises(ValueError, match="empty"):
            ad.attention(q, q, q)

    def test_gradients_match_finite_differences(self):
        rng = rng64(6)
        q = Tensor(rng.standard_normal((1, 2, 3, 4)))
        k = Tensor(rng.standard_normal((1, 2, 3, 4)))
        v = Tensor(rng.standard_normal((1, 2, 3, 4)))
        w = rng.standard_normal((1, 2, 3, 4))

        def loss():
            return (ad.attention(q, k, v) * Tensor(w)).mean()

        report = grad_check(loss, {"q": q, "k": k, "v": v})
        assert report.ok, str(report)


class TestMiscOps:
    def test_broadcast_add_and_unbroadcast_grad(self):
        a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        out = (a + b).sum()
        out.backward()
        assert a.grad.shape == (2, 3, 4)
        assert b.grad.shape == (4,)
        assert np.allclose(b.grad, 6.0)

    def test_matmul_batched_weight_grad_sums_over_batch(self):
        rng = rng64(7)
        x = Tensor(rng.standard_normal((2, 3, 4)))
        w = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        (x @ w).sum().backward()
        expected = np.einsum("btk,btn->kn", x.data, np.ones((2, 3, 5)))
        assert np.allclose(w.grad, expected)

    def test_composite_ops_against_finite_differences(self):
        rng = rng64(8)
        x = Tensor(rng.standard_normal((3, 4)) * 0.5)

        def loss():
            y = ad.gelu(x)
            y = ad.exp(y * 0.3) + ad.tanh(x)
            y = ad.concat([y, x * x], axis=1)
            return (y[:, 1:5] ** 2.0).mean() + ad.sqrt((x * x).sum() + 1.0)

        report = grad_check(loss, {"x": x})
        assert report.ok, str(report)

    def test_fp32_fp64_forward_agreement(self):
        rng = rng64(9)
        x64 = rng.standard_normal((2, 4, 8))
        blk64 = TransformerBlock(8, 2, rng64(10), dtype=np.float64)
        blk32 = TransformerBlock(8, 2, rng64(10), dtype=np.float32)
        for (_, p64), (_, p32) in zip(blk64.named_parameters().items(),
                                      blk32.named_parameters().items()):
            p32.data = p64.data.astype(np.float32)
        with ad.no_grad():
            y64 = blk64(Tensor(x64)).data
            y32 = blk32(Tensor(x64.astype(np.float32))).data
        rel = np.abs(y64 - y32) / np.maximum(np.abs(y64), 1.0)
        assert rel.max() < 1e-3

    def test_forward_deterministic(self):
        rng = rng64(11)
        blk = TransformerBlock(8, 2, rng, dtype=np.float32)
        x = Tensor(rng64(12).standard_normal((2, 5, 8)).astype(np.float32))
        with ad.no_grad():
            a = blk(x).data.copy()
            b = blk(x).data.copy()
        assert (a == b).all()


class TestAdam:
    def test_zero_grad_leaves_params_unchanged(self):
        p = Parameter(np.ones(3), name="p")
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(3)
        opt.step()
        assert np.allclose(p.data, 1.0)

    def test_first_step_magnitude_is_lr(self):
        # bias-corrected first step: delta = lr * g / (|g| + eps) ~ lr
        p = Parameter(np.array([2.0]), name="p")
        opt = Adam([p], lr=1e-3)
        p.grad = np.array([0.7])
        opt.step()
        assert abs((2.0 - p.data[0]) - 1e-3) < 1e-3 * 1e-4

    def test_deterministic_given_inputs(self):
        def run():
            p = Parameter(np.linspace(0, 1, 5), name="p")
            opt = Adam([p], lr=0.01)
            for i in range(3):
                p.grad = np.sin(np.arange(5.0) + i)
                opt.step()
            return p.data.copy()

        assert (run() == run()).all()

    def test_nonfinite_grad_rejected_with_name(self):
        p = Parameter(np.ones(2), name="enc.weird")
        opt = Adam([p], lr=0.1)
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(NonFiniteGradient, match="enc.weird"):
            opt.step()
        assert np.allclose(p.data, 1.0)  # step rejected entirely


class TestGradCheckHarness:
    def test_full_transformer_block_fragment(self):
        rng = rng64(13)
        blk = TransformerBlock(8, 2, rng, dtype=np.float64, mlp_ratio=2.0)
        x = Tensor(rng.standard_normal((2, 3, 8)))
        w = rng.standard_normal((2, 3, 8))
        tensors = dict(blk.named_parameters())
        tensors["x"] = x

        def loss():
            return (blk(x) * Tensor(w)).mean()

        report = grad_check(loss, tensors)
        assert report.ok, str(report)

    def test_failing_report_names_tensor(self):
        x = Tensor(np.array([1.0, 2.0]))

        def broken_loss():
            # forward uses x^2 but we corrupt the analytic grad afterwards
            return (x * x).sum()

        report = grad_check(broken_loss, {"x": x})
        assert report.ok
        x.grad = None

        y = Tensor(np.array([1.0, 2.0]))
        stash = {}

        def tricky_loss():
            # in-place data dependent loss that the tape cannot see
            out = (y * y).sum()
            stash["v"] = out
            return out + Tensor(float(y.data[0] ** 3))

        report = grad_check(tricky_loss, {"y": y})
        assert not report.ok
        assert report.worst_name == "y"


class TestModule:
    def test_named_parameters_unique_dotted_paths(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.a = Linear(2, 2, rng64())
                self.blocks = [TransformerBlock(4, 2, rng64(i)) for i in range(2)]

        names = list(Net().named_parameters())
        assert "a.weight" in names
        assert "blocks.0.attn.wq.weight" in names
        assert len(names) == len(set(names))

    def test_state_roundtrip(self):
        net = TransformerBlock(4, 2, rng64(20))
        state = {k: v.copy() for k, v in net.state_arrays().items()}
        for p in net.parameters():
            p.data += 1.0
        net.load_state_arrays(state)
        assert all((net.state_arrays()[k] == v).all() for k, v in state.items())

    def test_load_rejects_mismatched_names(self):
        net = Linear(2, 2, rng64())
        with pytest.raises(ValueError, match="state mismatch"):
            net.load_state_arrays({"weight": np.zeros((2, 2))})


def test_sinusoidal_positions_shape_and_range():
    table = sinusoidal_positions(10, 8)
    assert table.shape == (10, 8)
    assert np.abs(table).max() <= 1.0
    assert not np.allclose(table[0], table[1])
