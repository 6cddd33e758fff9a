"""Tests for dense layers, initialisation and the parameter registry."""

import numpy as np
import pytest

from altreco.errors import ContractError, DimensionError
from altreco.nn import ParamRegistry, forward_dense, init_dense
from altreco.tensor import Tape, Tensor


class TestInitDense:
    def test_same_seed_same_weights(self):
        a = init_dense(4, 2, "relu", np.random.default_rng(7))
        b = init_dense(4, 2, "relu", np.random.default_rng(7))
        assert np.array_equal(a.weight.data, b.weight.data)

    def test_bias_starts_at_zero(self):
        layer = init_dense(6, 3, "sigmoid", np.random.default_rng(0))
        assert np.array_equal(layer.bias.data, np.zeros(3))

    def test_glorot_bound_holds(self):
        # for in=4, out=2 the bound is sqrt(6/6) = 1
        layer = init_dense(4, 2, "tanh", np.random.default_rng(3))
        assert np.all(np.abs(layer.weight.data) <= 1.0)

    @pytest.mark.parametrize("in_w,out_w", [(0, 2), (2, 0), (-1, 3)])
    def test_bad_widths_rejected(self, in_w, out_w):
        with pytest.raises(ContractError):
            init_dense(in_w, out_w, "relu", np.random.default_rng(0))

    def test_unknown_activation_rejected(self):
        with pytest.raises(ContractError):
            init_dense(2, 2, "softplus", np.random.default_rng(0))

    def test_zero_init_without_rng(self):
        layer = init_dense(3, 3, "linear", None)
        assert np.array_equal(layer.weight.data, np.zeros((3, 3)))


class TestForwardDense:
    def test_identity_layer(self):
        layer = init_dense(3, 3, "linear", None)
        layer.weight.data = np.eye(3)
        x = np.random.default_rng(1).normal(size=(5, 3))
        out = forward_dense(layer, Tensor(x))
        assert np.array_equal(out.data, x)

    def test_zero_weights_sigmoid_gives_half(self):
        layer = init_dense(4, 2, "sigmoid", None)
        out = forward_dense(layer, Tensor(np.ones((3, 4))))
        assert np.all(out.data == 0.5)

    def test_matches_hand_computation(self):
        rng = np.random.default_rng(11)
        layer = init_dense(5, 4, "tanh", rng)
        layer.bias.data = rng.normal(size=4)
        x = rng.normal(size=(6, 5))
        expected = np.tanh(x @ layer.weight.data + layer.bias.data)
        out = forward_dense(layer, Tensor(x))
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_width_mismatch(self):
        layer = init_dense(5, 4, "relu", np.random.default_rng(0))
        with pytest.raises(DimensionError):
            forward_dense(layer, Tensor(np.zeros((2, 3))))


class TestParamRegistry:
    def test_duplicate_name_rejected(self):
        reg = ParamRegistry()
        reg.add("a.weight", Tensor([1.0]))
        with pytest.raises(ContractError):
            reg.add("a.weight", Tensor([2.0]))

    def test_iteration_order_is_insertion_order(self):
        reg = ParamRegistry()
        for name in ("f.l0", "ue.l0", "c.head"):
            reg.add(name, Tensor([0.0]))
        assert reg.names() == ["f.l0", "ue.l0", "c.head"]

    def test_subset_by_prefix(self):
        reg = ParamRegistry()
        layer = init_dense(2, 2, "relu", np.random.default_rng(0))
        reg.add_layer("ue.l0", layer)
        reg.add_layer("c.l0", init_dense(2, 2, "relu", np.random.default_rng(1)))
        sub = reg.subset("ue.")
        assert sub.names() == ["ue.l0.weight", "ue.l0.bias"]
        assert sub.get("ue.l0.weight") is layer.weight

    def test_same_seed_reproduces_registry_bit_exactly(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            reg = ParamRegistry()
            reg.add_layer("f.l0", init_dense(8, 4, "relu", rng))
            reg.add_layer("f.l1", init_dense(4, 2, "sigmoid", rng))
            return reg

        left, right = build(21), build(21)
        for (name_l, p_l), (name_r, p_r) in zip(left.items(), right.items()):
            assert name_l == name_r
            assert np.array_equal(p_l.data, p_r.data)

    def test_no_orphan_parameters_under_backward(self):
        """Every registered tensor is reachable: a full forward/backward
        touches each parameter's grad exactly once."""
        rng = np.random.default_rng(2)
        reg = ParamRegistry()
        l0 = reg.add_layer("m.l0", init_dense(6, 5, "tanh", rng))
        l1 = reg.add_layer("m.l1", init_dense(5, 3, "sigmoid", rng))
        x = Tensor(rng.normal(size=(4, 6)))
        with Tape() as tape:
            out = forward_dense(l1, forward_dense(l0, x))
            tape.backward(out.mean())
        touched = [name for name, p in reg.items() if p.grad is not None]
        assert touched == reg.names()
