from __future__ import annotations

import threading

import numpy as np
import pytest

from locktune.errors import DegenerateInputError, GraphError, NonFiniteError, ShapeError
from locktune.tensor import Tensor, backward, grad_enabled, no_grad, ops


# -------------------------------------------------------------------------------------------------
# broadcasting
# -------------------------------------------------------------------------------------------------

def test_row_broadcast_adds_bias_to_every_row(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    y = ops.add(x, b)
    np.testing.assert_array_equal(y.data, x.data + b.data)
    backward(ops.sum(y))
    np.testing.assert_array_equal(b.grad, np.full(4, 6.0))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_scalar_broadcast_sums_gradient():
    t = Tensor(np.array(2.0), requires_grad=True)
    x = Tensor(np.ones((3, 2)))
    backward(ops.sum(ops.mul(t, x)))
    assert t.grad.shape == ()
    assert float(t.grad) == 6.0


@pytest.mark.parametrize("a,b", [((2, 3), (2,)), ((2, 3), (3, 2)), ((4, 1), (4, 3))])
def test_non_row_broadcast_is_rejected(a, b):
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros(a)), Tensor(np.zeros(b)))


# -------------------------------------------------------------------------------------------------
# graph semantics
# -------------------------------------------------------------------------------------------------

def test_backward_overwrites_instead_of_accumulating():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(ops.sum(ops.scale(w, 3.0)))
    np.testing.assert_array_equal(w.grad, [3.0, 3.0])
    backward(ops.sum(ops.scale(w, 5.0)))
    np.testing.assert_array_equal(w.grad, [5.0, 5.0])


def test_second_backward_on_same_graph_raises():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = ops.sum(ops.mul(w, w))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_backward_needs_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        backward(ops.scale(w, 2.0))


def test_frozen_leaf_gets_no_gradient():
    frozen = Tensor(np.ones(3), requires_grad=False)
    live = Tensor(np.ones(3), requires_grad=True)
    backward(ops.sum(ops.mul(frozen, live)))
    assert frozen.grad is None
    np.testing.assert_array_equal(live.grad, np.ones(3))


def test_shared_subexpression_gradients_add_up():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ops.mul(x, x)
    backward(ops.sum(ops.add(y, y)))
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_records_nothing():
    w = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ops.scale(w, 2.0)
    assert not y.requires_grad
    assert y.node is None
    assert grad_enabled()


def test_no_grad_is_thread_local():
    seen: list[bool] = []
    with no_grad():
        t = threading.Thread(target=lambda: seen.append(grad_enabled()))
        t.start()
        t.join()
        assert not grad_enabled()
    assert seen == [True]


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        ops.exp(Tensor(np.array([1000.0])))
    with pytest.raises(NonFiniteError):
        Tensor(np.array([np.nan]))


# -------------------------------------------------------------------------------------------------
# primitives
# -------------------------------------------------------------------------------------------------

def test_layer_norm_standardises_rows(rng):
    x = Tensor(rng.normal(3.0, 5.0, size=(4, 7)))
    y = ops.layer_norm(x, np.ones(7), np.zeros(7), eps=1e-12).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-9)


def test_layer_norm_rejects_bad_gain_shape():
    with pytest.raises(ShapeError):
        ops.layer_norm(Tensor(np.zeros((2, 4))), np.ones(3), np.zeros(4))


def test_softmax_mask_zeroes_masked_entries(rng):
    x = Tensor(rng.normal(size=(2, 4)))
    mask = np.array([[True, True, False, True], [True, False, False, False]])
    y = ops.softmax(x, axis=-1, mask=mask).data
    assert y[0, 2] == 0.0
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert y[1, 0] == 1.0


def test_softmax_fully_masked_row_raises():
    with pytest.raises(DegenerateInputError):
        ops.softmax(Tensor(np.zeros((1, 3))), mask=np.zeros((1, 3), dtype=bool))


def test_softmax_is_shift_stable():
    y = ops.softmax(Tensor(np.array([[1000.0, 1000.0]]))).data
    np.testing.assert_allclose(y, [[0.5, 0.5]])


def test_l2_normalize_zero_row_raises():
    with pytest.raises(DegenerateInputError):
        ops.l2_normalize(Tensor(np.array([[1.0, 0.0], [0.0, 0.0]])))


def test_batched_matmul_shapes(rng):
    a = Tensor(rng.normal(size=(2, 3, 4, 5)))
    b = Tensor(rng.normal(size=(5, 6)))
    c = Tensor(rng.normal(size=(2, 3, 5, 2)))
    assert ops.matmul(a, b).shape == (2, 3, 4, 6)
    assert ops.matmul(a, c).shape == (2, 3, 4, 2)
    with pytest.raises(ShapeError):
        ops.matmul(a, Tensor(np.zeros((4, 6))))


def test_embedding_gradient_accumulates_repeated_ids():
    w = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    ids = np.array([[1, 1, 3]])
    out = ops.embedding(w, ids)
    np.testing.assert_array_equal(out.data[0, 0], [2.0, 3.0])
    backward(ops.sum(out))
    np.testing.assert_array_equal(w.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_embedding_rejects_out_of_range_id():
    with pytest.raises(ShapeError):
        ops.embedding(Tensor(np.zeros((3, 2))), np.array([3]))


def test_masked_mean_ignores_padding(rng):
    x = rng.normal(size=(2, 4, 3))
    mask = np.array([[True, True, False, False], [True, True, True, True]])
    y = ops.masked_mean(Tensor(x), mask).data
    np.testing.assert_allclose(y[0], x[0, :2].mean(axis=0))
    np.testing.assert_allclose(y[1], x[1].mean(axis=0))


def test_concat_and_slice_route_gradients():
    a = Tensor(np.ones((1, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    c = ops.concat([a, b], axis=1)
    backward(ops.sum(ops.slice_axis(c, 1, 1, 4)))
    np.testing.assert_array_equal(a.grad, [[0.0, 1.0]])
    np.testing.assert_array_equal(b.grad, [[1.0, 1.0, 0.0]])


def test_custom_op_plugs_into_backward():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = ops.custom_op("square", [x], x.data**2, lambda g: (2.0 * x.data * g,))
    backward(ops.sum(y))
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_tensor_operator_sugar():
    a = Tensor(np.array([2.0]), requires_grad=True)
    y = (a * 3.0 + 1.0 - a) / 2.0
    backward(y.sum())
    np.testing.assert_allclose(y.data, [2.5])
    np.testing.assert_allclose(a.grad, [1.0])
