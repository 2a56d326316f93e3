"""Autodiff core: graph recording, tape order, backward semantics."""

import numpy as np
import pytest

from pmadnet import ops
from pmadnet.errors import DetachedTensor, NotScalarLoss, ShapeMismatch
from pmadnet.tensor import Tape, Tensor, no_grad, tensor_from


def test_sum_backward_is_ones():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    loss = ops.sum_all(x)
    loss.backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_fanout_accumulates():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    loss = ops.sum_all(ops.add(x, x))
    loss.backward()
    np.testing.assert_array_equal(x.grad, np.full(2, 2.0))


def test_diamond_graph_each_node_once():
    # loss = sum(z + z) with z = x*x: d/dx = 4x. Double-visiting any node
    # would inflate the gradient.
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    z = ops.mul(x, x)
    loss = ops.sum_all(ops.add(z, z))
    loss.backward()
    np.testing.assert_allclose(x.grad, 4.0 * x.data, rtol=0, atol=0)


def test_tape_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.mul(x, x)
    z = ops.add(y, x)
    loss = ops.sum_all(z)
    tape = Tape.trace(loss)
    pos = {id(t): i for i, t in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes), "every tensor appears exactly once"
    for t in tape.nodes:
        for p in t.parents:
            assert pos[id(p)] < pos[id(t)], "parents precede consumers"
    assert tape.nodes[-1] is loss


def test_tape_leaves_have_no_backprop():
    x = Tensor(np.ones(2), requires_grad=True)
    loss = ops.sum_all(x)
    for entry in Tape.trace(loss).entries():
        if not entry.parents:
            assert entry.backprop is None


def test_backward_rejects_vector_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.add(x, x)
    with pytest.raises(NotScalarLoss):
        y.backward()


def test_backward_rejects_detached_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.sum_all(x)
    with pytest.raises(DetachedTensor):
        y.backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad
    assert y.parents == ()
    assert y.backprop is None


def test_scalar_leaf_is_its_own_loss():
    x = Tensor(np.array(5.0), requires_grad=True)
    x.backward()
    np.testing.assert_array_equal(x.grad, np.array(1.0))


def test_tensor_from_validates_shape():
    with pytest.raises(ShapeMismatch):
        tensor_from([1.0, 2.0], shape=(3,))
    t = tensor_from([1.0, 2.0], shape=(2,), requires_grad=True, dtype=np.float32)
    assert t.dtype == np.float32 and t.requires_grad


def test_reshape_shares_values_and_routes_grads():
    x = Tensor(np.arange(6, dtype=np.float64), requires_grad=True)
    y = x.reshape(2, 3)
    np.testing.assert_array_equal(y.data.reshape(-1), x.data)
    w = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    loss = ops.sum_all(ops.mul(y, w))
    loss.backward()
    np.testing.assert_array_equal(x.grad, w.data.reshape(-1))


def test_grad_shape_matches_parent():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    loss = ops.mean_all(ops.relu(x))
    loss.backward()
    assert x.grad.shape == (2, 3)


def test_item_requires_single_element():
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones(3)).item()
    assert Tensor(np.array([2.5])).item() == 2.5


def test_operator_sugar():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]))
    loss = ops.sum_all((a + b) * b - a / b)
    loss.backward()
    expected = b.data - 1.0 / b.data
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)


def test_backward_twice_same_graph_accumulates():
    # Documented behavior: calling backward again adds onto existing grads,
    # so training code zeroes grads between steps.
    x = Tensor(np.ones(2), requires_grad=True)
    loss = ops.sum_all(x)
    loss.backward()
    loss.grad = None
    loss.backward()
    np.testing.assert_array_equal(x.grad, np.full(2, 2.0))


def test_deterministic_backward():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((4, 4))
    grads = []
    for _ in range(2):
        x = Tensor(data.copy(), requires_grad=True)
        loss = ops.mean_all(ops.sigmoid(ops.mul(x, x)))
        loss.backward()
        grads.append(x.grad.copy())
    np.testing.assert_array_equal(grads[0], grads[1])


def test_int_input_promoted_to_float():
    t = Tensor(np.array([1, 2, 3]))
    assert np.issubdtype(t.dtype, np.floating)
