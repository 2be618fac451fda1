import numpy as np
import pytest

from Gesme import ops
from Gesme.core import Tape, Tensor, active_tape, backward, get_dtype, no_grad, precision
from Gesme.exceptions import DimensionError, NumericalError, UsageError


def test_default_dtype_is_float32():
    assert get_dtype() == np.float32
    assert Tensor([1.0, 2.0]).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert get_dtype() == np.float32


def test_construction_copies_data():
    source = np.array([1.0, 2.0])
    tensor = Tensor(source)
    source[0] = 5.0
    assert tensor.data[0] == 1.0


def test_non_finite_values_rejected():
    with pytest.raises(NumericalError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericalError):
        Tensor([np.inf])


def test_chain_rule_through_shared_node():
    with precision(np.float64):
        x = Tensor([1.5, -2.0], requires_grad=True)
        with Tape():
            y = ops.hadamard(x, x)
            loss = ops.reduce_sum(ops.add(y, y))
            backward(loss)
    np.testing.assert_allclose(x.grad, 4 * np.array([1.5, -2.0]))


def test_default_tape_released_after_backward():
    x = Tensor([1.0, -2.0], requires_grad=True)
    loss = ops.reduce_sum(ops.square(x))
    tape = active_tape()
    assert len(tape) >= 2
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, -4.0])
    assert active_tape() is not tape
    assert len(active_tape()) == 0


def test_explicit_tape_kept_after_backward():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        backward(ops.reduce_sum(ops.square(x)))
        assert active_tape() is tape
        assert len(tape) == 2


def test_gradients_accumulate_until_zeroed():
    x = Tensor([2.0], requires_grad=True)
    for _ in range(2):
        with Tape():
            backward(ops.reduce_sum(ops.affine(x, scale=3.0)))
    np.testing.assert_allclose(x.grad, [6.0])
    x.zero_grad()
    np.testing.assert_allclose(x.grad, [0.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        y = ops.affine(x, scale=2.0)
        with pytest.raises(UsageError):
            backward(y)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = ops.affine(x, scale=2.0)
        assert len(tape) == 0
        assert not y.requires_grad


def test_tape_is_append_only():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        a = ops.square(x)
        b = ops.reduce_sum(a)
    assert [node.op for node in tape.nodes] == ["square", "reduce_sum"]
    assert a._index < b._index


def test_operators_are_strict():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3,)))
    with pytest.raises(DimensionError):
        a + b
    np.testing.assert_allclose((a * 2.0).numpy(), 2 * np.ones((2, 3)))
    np.testing.assert_allclose((-a).numpy(), -np.ones((2, 3)))


def test_item_requires_single_element():
    assert Tensor(3.0).item() == 3.0
    with pytest.raises(UsageError):
        Tensor([1.0, 2.0]).item()
