"""Gradient tape: elementwise ops, broadcasting, reductions, backward."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, rel_error
from mcwf import autodiff as ad
from mcwf.autodiff import GradientTape, Tensor
from mcwf.errors import (
    DetachedTensor,
    DomainError,
    NotScalar,
    ShapeMismatch,
    TapeMismatch,
)


def grad_of(f, x0, *more):
    """Analytic gradient of f(x, *more) w.r.t. x via one tape."""
    tape = GradientTape()
    x = tape.watch(np.asarray(x0, dtype=np.float64))
    loss = f(x, *more)
    return tape.backward(loss)[x.tape_id]


def test_add_values():
    out = ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_mul_by_zero_gradient_is_zero():
    g = grad_of(lambda x: ad.tensor_sum(ad.mul(x, 0.0)), [1.0, -3.0, 7.0])
    np.testing.assert_array_equal(g, [0.0, 0.0, 0.0])


def test_sum_square_gradient_matches_fd():
    x0 = np.array([1.0, -2.0])
    g = grad_of(lambda x: ad.tensor_sum(ad.square(x)), x0)
    np.testing.assert_allclose(g, [2.0, -4.0], rtol=0, atol=1e-12)
    fd = central_difference(lambda v: float((v**2).sum()), x0)
    assert rel_error(g, fd) < 1e-8


@pytest.mark.parametrize(
    "kind",
    ["abs", "log", "exp", "square", "sqrt", "sigmoid", "softplus", "cos", "sin", "tanh"],
)
def test_unary_gradients_match_fd(kind, rng):
    x0 = rng.uniform(0.3, 2.0, size=(3, 4))  # positive keeps log/sqrt in domain

    def loss(x):
        return ad.tensor_sum(ad.square(ad.elementwise(kind, x)))

    g = grad_of(loss, x0)

    def f(v):
        tape = GradientTape()
        return float(loss(tape.watch(v)).data)

    assert rel_error(g, central_difference(f, x0)) < 1e-6


@pytest.mark.parametrize("kind", ["add", "sub", "mul", "div", "atan2"])
def test_binary_gradients_match_fd(kind, rng):
    a0 = rng.uniform(0.5, 2.0, size=(2, 3))
    b0 = rng.uniform(0.5, 2.0, size=(3,))  # broadcast against a0

    def loss(a, b):
        return ad.tensor_sum(ad.square(ad.elementwise(kind, a, b)))

    tape = GradientTape()
    a = tape.watch(a0)
    b = tape.watch(b0)
    grads = tape.backward(loss(a, b))

    def f_a(v):
        t = GradientTape()
        return float(loss(t.watch(v), Tensor(b0)).data)

    def f_b(v):
        t = GradientTape()
        return float(loss(Tensor(a0), t.watch(v)).data)

    assert rel_error(grads[a.tape_id], central_difference(f_a, a0)) < 1e-6
    assert rel_error(grads[b.tape_id], central_difference(f_b, b0)) < 1e-6


def test_div_epsilon_guard():
    out = ad.div(Tensor([1.0]), Tensor([0.0]), eps=0.5)
    np.testing.assert_allclose(out.data, [2.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([-1.0]))
    with pytest.raises(DomainError):
        ad.sqrt(Tensor([-1.0]))
    # inside the epsilon guard: fine
    ad.log(Tensor([-0.5]), eps=1.0)


def test_broadcast_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_matmul_gradient_matches_fd(rng):
    a0 = rng.standard_normal((4, 2, 3))
    b0 = rng.standard_normal((3, 5))  # broadcast over the leading batch

    def loss(a, b):
        return ad.tensor_sum(ad.square(ad.matmul(a, b)))

    tape = GradientTape()
    a = tape.watch(a0)
    b = tape.watch(b0)
    grads = tape.backward(loss(a, b))

    fd_a = central_difference(lambda v: float(((v @ b0) ** 2).sum()), a0)
    fd_b = central_difference(lambda v: float(((a0 @ v) ** 2).sum()), b0)
    assert rel_error(grads[a.tape_id], fd_a) < 1e-6
    assert rel_error(grads[b.tape_id], fd_b) < 1e-6


def test_reductions_and_reshape(rng):
    x0 = rng.standard_normal((3, 4, 2))
    g = grad_of(lambda x: ad.tensor_sum(ad.square(ad.tensor_sum(x, axis=1))), x0)
    fd = central_difference(lambda v: float((v.sum(axis=1) ** 2).sum()), x0)
    assert rel_error(g, fd) < 1e-6

    g2 = grad_of(lambda x: ad.tensor_sum(ad.square(ad.reshape(x, (6, 4)))), x0)
    np.testing.assert_allclose(g2, 2 * x0, atol=1e-12)

    g3 = grad_of(lambda x: ad.tensor_sum(ad.square(x.mean(axis=0))), x0)
    fd3 = central_difference(lambda v: float((v.mean(axis=0) ** 2).sum()), x0)
    assert rel_error(g3, fd3) < 1e-6


def test_take_index_gradient(rng):
    x0 = rng.standard_normal((5, 3))
    g = grad_of(lambda x: ad.tensor_sum(ad.square(ad.take_index(x, 1, axis=1))), x0)
    expect = np.zeros_like(x0)
    expect[:, 1] = 2 * x0[:, 1]
    np.testing.assert_allclose(g, expect, atol=1e-12)


def test_backward_identity_leaf():
    tape = GradientTape()
    x = tape.watch(np.array(3.0))
    assert tape.backward(x)[x.tape_id] == 1.0


def test_backward_unreachable_leaf_gets_zero():
    tape = GradientTape()
    x = tape.watch(np.array([1.0, 2.0]))
    y = tape.watch(np.array(5.0))
    loss = ad.tensor_sum(ad.square(y))
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[x.tape_id], [0.0, 0.0])


def test_backward_rejects_nonscalar_and_detached():
    tape = GradientTape()
    x = tape.watch(np.ones(3))
    with pytest.raises(NotScalar):
        tape.backward(ad.square(x))
    other = GradientTape()
    z = other.watch(np.array(1.0))
    with pytest.raises(DetachedTensor):
        tape.backward(z)
    with pytest.raises(DetachedTensor):
        tape.backward(Tensor(np.array(1.0)))


def test_mixed_tapes_rejected():
    t1, t2 = GradientTape(), GradientTape()
    a = t1.watch(np.ones(2))
    b = t2.watch(np.ones(2))
    with pytest.raises(TapeMismatch):
        ad.add(a, b)


def test_constants_record_nothing():
    tape = GradientTape()
    tape.watch(np.ones(2))
    before = len(tape.nodes)
    ad.add(Tensor([1.0]), Tensor([2.0]))
    assert len(tape.nodes) == before


def test_backward_is_linear(rng):
    x0 = rng.standard_normal(6)

    def both(a, b):
        tape = GradientTape()
        x = tape.watch(x0)
        l1 = ad.tensor_sum(ad.square(x))
        l2 = ad.tensor_sum(ad.exp(ad.mul(x, 0.3)))
        loss = ad.add(ad.mul(l1, a), ad.mul(l2, b))
        return tape.backward(loss)[x.tape_id]

    g_combo = both(2.0, -3.0)
    g1 = both(1.0, 0.0)
    g2 = both(0.0, 1.0)
    assert rel_error(g_combo, 2.0 * g1 - 3.0 * g2) < 1e-12


def test_replay_is_bit_identical(rng):
    x0 = rng.standard_normal((4, 4))

    def run():
        tape = GradientTape()
        x = tape.watch(x0.copy())
        loss = ad.tensor_sum(ad.mul(ad.sigmoid(x), ad.softplus(x)))
        return loss.data.copy(), tape.backward(loss)[x.tape_id]

    v1, g1 = run()
    v2, g2 = run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_unbroadcast_property(rows, cols, seed):
    """Gradient of sum(a*b) with broadcasting equals broadcast-summed operand."""
    r = np.random.default_rng(seed)
    a0 = r.standard_normal((rows, cols))
    b0 = r.standard_normal((cols,))
    tape = GradientTape()
    a = tape.watch(a0)
    b = tape.watch(b0)
    grads = tape.backward(ad.tensor_sum(ad.mul(a, b)))
    np.testing.assert_allclose(grads[a.tape_id], np.broadcast_to(b0, a0.shape), atol=1e-15)
    np.testing.assert_allclose(grads[b.tape_id], a0.sum(axis=0), atol=1e-12)


def test_elementwise_dispatch_arity():
    with pytest.raises(ShapeMismatch):
        ad.elementwise("add", Tensor([1.0]))
    with pytest.raises(ShapeMismatch):
        ad.elementwise("exp", Tensor([1.0]), Tensor([2.0]))
    with pytest.raises(DomainError):
        ad.elementwise("nope", Tensor([1.0]))
