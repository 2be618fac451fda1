import numpy as np
import pytest

from Gesme import ops
from Gesme.core import Tensor, precision
from Gesme.exceptions import ConfigError, DimensionError
from Gesme.modules.base import GROUP_ARCHITECTURE, GROUP_WEIGHTING
from Gesme.modules.layers import ConvRnnCell, DenseLayer, FeatureWeightingLayer, GruCell, zone_distributed_gru

from . import oracles
from .conftest import check_gradients


def gru_weights(cell):
    return ({g: getattr(cell, f"U_{g}").data for g in "zrh"},
            {g: getattr(cell, f"W_{g}").data for g in "zrh"},
            {g: getattr(cell, f"b_{g}").data for g in "zrh"})


class TestFeatureWeighting:
    def test_initialization_is_seeded_and_bounded(self):
        a = FeatureWeightingLayer.initialize((3, 2, 4), gamma=0.5, seed=11)
        b = FeatureWeightingLayer.initialize((3, 2, 4), gamma=0.5, seed=11)
        c = FeatureWeightingLayer.initialize((3, 2, 4), gamma=0.5, seed=12)
        np.testing.assert_array_equal(a.W_FI.data, b.W_FI.data)
        assert not np.array_equal(a.W_FI.data, c.W_FI.data)
        assert np.all(np.abs(a.W_FI.data) <= 0.5)

    def test_linear_weighting_is_hadamard(self, rng):
        layer = FeatureWeightingLayer((2, 3), seed=1)
        X = rng.random((4, 2, 3))
        np.testing.assert_allclose(layer(Tensor(X)).numpy(), X * layer.W_FI.data, rtol=1e-6)

    def test_sigmoid_weighting(self, rng):
        layer = FeatureWeightingLayer((2, 3), activation="sigmoid", seed=1)
        X = rng.random((2, 3))
        np.testing.assert_allclose(layer(Tensor(X)).numpy(), X * oracles.sigmoid(layer.W_FI.data), rtol=1e-5)

    def test_weights_belong_to_weighting_group(self):
        layer = FeatureWeightingLayer((2, 2), seed=0)
        assert [group for _, _, group in layer.named_parameters()] == [GROUP_WEIGHTING]

    def test_shape_mismatch(self, rng):
        layer = FeatureWeightingLayer((2, 3), seed=0)
        with pytest.raises(DimensionError):
            layer(Tensor(rng.random((4, 3, 2))))

    def test_gamma_must_be_positive(self):
        with pytest.raises(ConfigError):
            FeatureWeightingLayer((2,), gamma=0.0)

    def test_gradients(self, grad_rng, grad_seed):
        with precision(np.float64):
            layer = FeatureWeightingLayer((2, 3), activation="sigmoid", seed=grad_seed)
            X = Tensor(grad_rng.random((4, 2, 3)), requires_grad=True, name="X")
            check_gradients(lambda: ops.reduce_sum(ops.square(layer(X))), [layer.W_FI, X])


class TestDense:
    def test_forward_matches_numpy(self, rng):
        with precision(np.float64):
            layer = DenseLayer(3, 2, activation="tanh", seed=5)
            x = rng.normal(size=(4, 3))
            expected = np.tanh(x @ layer.W.data.T + layer.b.data)
            np.testing.assert_allclose(layer(Tensor(x)).numpy(), expected)

    def test_parameters_in_architecture_group(self):
        layer = DenseLayer(3, 2, seed=5)
        assert {group for _, _, group in layer.named_parameters()} == {GROUP_ARCHITECTURE}
        assert layer.parameter_count() == 3 * 2 + 2

    def test_gradients(self, grad_rng, grad_seed):
        with precision(np.float64):
            layer = DenseLayer(3, 2, activation="sigmoid", seed=grad_seed)
            x = Tensor(grad_rng.normal(size=(2, 4, 3)), requires_grad=True, name="x")
            check_gradients(lambda: ops.reduce_sum(ops.square(layer(x))), [layer.W, layer.b, x])


class TestGru:
    def test_matches_reference_recurrence(self, rng):
        with precision(np.float64):
            cell = GruCell(3, 2, seed=9)
            xs = rng.normal(size=(5, 3))
            U, W, b = gru_weights(cell)
            expected = oracles.gru(xs, U, W, b)
            np.testing.assert_allclose(cell.sequence(Tensor(xs[None])).numpy()[0], expected[-1], rtol=1e-10)
            np.testing.assert_allclose(cell.sequence(Tensor(xs[None]), return_sequences=True).numpy()[0], expected,
                                       rtol=1e-10)

    def test_zero_input_keeps_zero_state(self):
        cell = GruCell(3, 4, seed=0)
        out = cell.sequence(Tensor(np.zeros((2, 6, 3))))
        np.testing.assert_array_equal(out.numpy(), np.zeros((2, 4)))

    def test_zone_distributed_shares_parameters(self, rng):
        with precision(np.float64):
            cell = GruCell(2, 3, seed=4)
            X = rng.normal(size=(2, 4, 5, 2))                            # [B, N, T, F]
            out = zone_distributed_gru(cell, Tensor(X)).numpy()
            U, W, b = gru_weights(cell)
            for batch in range(2):
                for zone in range(4):
                    np.testing.assert_allclose(out[batch, zone], oracles.gru(X[batch, zone], U, W, b)[-1],
                                               rtol=1e-10)

    def test_gradients_through_time(self, grad_rng, grad_seed):
        with precision(np.float64):
            cell = GruCell(2, 3, seed=grad_seed)
            xs = Tensor(grad_rng.normal(size=(2, 4, 2)), requires_grad=True, name="xs")
            params = cell.parameters()
            check_gradients(lambda: ops.reduce_sum(ops.square(cell.sequence(xs, return_sequences=True))),
                            params + [xs], rtol=1e-5, atol=1e-8)

    def test_hidden_must_be_positive(self):
        with pytest.raises(ConfigError):
            GruCell(3, 0)


class TestConvRnn:
    def test_matches_reference_recurrence(self, rng):
        with precision(np.float64):
            cell = ConvRnnCell(2, 3, 3, seed=8)
            xs = rng.normal(size=(4, 2, 5))                              # [N, F, T]
            expected = oracles.convrnn(xs, cell.U_c.data, cell.W_c.data, cell.b_c.data)
            out = cell.sequence(Tensor(xs[None])).numpy()[0]
        assert out.shape == (4, 3, 5)
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)

    def test_gradients(self, grad_rng, grad_seed):
        with precision(np.float64):
            cell = ConvRnnCell(2, 2, 3, activation="tanh", seed=grad_seed)
            xs = Tensor(grad_rng.normal(size=(1, 3, 2, 3)), requires_grad=True, name="xs")
            check_gradients(lambda: ops.reduce_sum(ops.square(cell.sequence(xs))), cell.parameters() + [xs])

    def test_even_filter_rejected(self):
        with pytest.raises(ConfigError):
            ConvRnnCell(2, 2, 4)
