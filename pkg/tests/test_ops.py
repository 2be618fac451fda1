import numpy as np
import pytest

from Gesme import ops
from Gesme.core import Tensor, precision
from Gesme.exceptions import ConfigError, DimensionError

from . import oracles
from .conftest import check_gradients


def param(rng, *shape, name="x"):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


@pytest.mark.parametrize("op", [ops.sigmoid, ops.tanh, ops.square])
def test_elementwise_gradients(op, grad_rng):
    with precision(np.float64):
        x = param(grad_rng, 3, 4)
        weights = Tensor(grad_rng.normal(size=(3, 4)))
        check_gradients(lambda: ops.reduce_sum(ops.hadamard(op(x), weights)), [x])


def test_relu_and_absolute_gradients(grad_rng):
    with precision(np.float64):
        signs = grad_rng.choice([-1.0, 1.0], size=(2, 5))
        x = Tensor(signs * grad_rng.uniform(0.5, 1.5, size=(2, 5)), requires_grad=True)
        weights = Tensor(grad_rng.normal(size=(2, 5)))
        check_gradients(lambda: ops.reduce_sum(ops.hadamard(ops.relu(x), weights)), [x])
        check_gradients(lambda: ops.reduce_sum(ops.hadamard(ops.absolute(x), weights)), [x])


def test_matmul_gradients_with_shared_matrix(grad_rng):
    with precision(np.float64):
        a = param(grad_rng, 2, 3, 4, name="a")
        b = param(grad_rng, 4, 5, name="b")
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.matmul(a, b))), [a, b])


def test_matmul_rejects_mismatch():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_bias_add_and_scale_by_gradients(grad_rng):
    with precision(np.float64):
        x = param(grad_rng, 4, 2, 3, name="x")
        w = param(grad_rng, 2, 3, name="w")
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.bias_add(x, w))), [x, w])
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.scale_by(x, w))), [x, w])


def test_conv1d_matches_loop(rng):
    with precision(np.float64):
        x = rng.normal(size=(5, 3))
        filters = rng.normal(size=(4, 3, 3))
        bias = rng.normal(size=4)
        out = ops.conv1d(Tensor(x), Tensor(filters), Tensor(bias)).numpy()
    np.testing.assert_allclose(out, oracles.conv1d(x, filters, bias), rtol=1e-10, atol=1e-12)


def test_conv1d_same_padding_keeps_zone_axis(rng):
    out = ops.conv1d(Tensor(rng.normal(size=(2, 6, 3))), Tensor(rng.normal(size=(4, 3, 5))))
    assert out.shape == (2, 6, 4)


def test_conv1d_gradients(grad_rng):
    with precision(np.float64):
        x = param(grad_rng, 2, 4, 3, name="x")
        filters = param(grad_rng, 2, 3, 3, name="filters")
        bias = param(grad_rng, 2, name="bias")
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.conv1d(x, filters, bias))), [x, filters, bias])


def test_conv1d_filter_length_limits(rng):
    x = Tensor(rng.normal(size=(3, 2)))
    with pytest.raises(ConfigError):
        ops.conv1d(x, Tensor(rng.normal(size=(1, 2, 4))))
    with pytest.raises(ConfigError):
        ops.conv1d(x, Tensor(rng.normal(size=(1, 2, 7))))
    assert ops.conv1d(x, Tensor(rng.normal(size=(1, 2, 5)))).shape == (3, 1)


def test_softmax_rows_sum_to_one_and_gradients(grad_rng):
    with precision(np.float64):
        x = param(grad_rng, 3, 4)
        np.testing.assert_allclose(ops.softmax(x).numpy().sum(axis=-1), np.ones(3))
        np.testing.assert_allclose(ops.softmax(x).numpy(), oracles.softmax(x.data))
        weights = Tensor(grad_rng.normal(size=(3, 4)))
        check_gradients(lambda: ops.reduce_sum(ops.hadamard(ops.softmax(x), weights)), [x])


def test_softmax_is_stable_for_large_logits():
    probs = ops.softmax(Tensor([[1000.0, 0.0]])).numpy()
    np.testing.assert_allclose(probs, [[1.0, 0.0]], atol=1e-6)


def test_structural_gradients(grad_rng):
    with precision(np.float64):
        a = param(grad_rng, 2, 3, name="a")
        b = param(grad_rng, 2, 2, name="b")
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.concat([a, b], axis=-1))), [a, b])
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.stack([a, a], axis=1))), [a])
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.permute(a, (1, 0)))), [a])
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.select(a, 1, -1))), [a])
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.repeat(a, 3, axis=1))), [a])
        check_gradients(lambda: ops.reduce_mean(ops.square(ops.reduce_sum(a, axis=0))), [a])


def test_reshape_steps():
    x = Tensor(np.arange(12.0).reshape(1, 2, 6))
    assert ops.reshape_steps(x, 3).shape == (1, 2, 3, 2)
    with pytest.raises(DimensionError):
        ops.reshape_steps(x, 4)


def test_permute_rejects_invalid_axes():
    with pytest.raises(DimensionError):
        ops.permute(Tensor(np.ones((2, 3))), (0, 0))


def test_mix_weighted_sum_and_gradients(grad_rng):
    with precision(np.float64):
        probs = Tensor(oracles.softmax(grad_rng.normal(size=(2, 3))), requires_grad=True, name="probs")
        stacked = param(grad_rng, 2, 3, 4, name="stacked")
        expected = np.einsum("bm,bmk->bk", probs.data, stacked.data)
        np.testing.assert_allclose(ops.mix(probs, stacked).numpy(), expected)
        check_gradients(lambda: ops.reduce_sum(ops.square(ops.mix(probs, stacked))), [probs, stacked])


def test_unknown_activation():
    with pytest.raises(ConfigError):
        ops.activation("swish")
