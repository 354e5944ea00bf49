"""Core tensor/tape behavior: forward values against independent oracles,
gradients against central finite differences."""

import numpy as np
import pytest

from videotok.autodiff import (
    Tape,
    Tensor,
    backward,
    concat,
    gelu,
    log_softmax,
    matmul,
    power,
    reshape,
    softmax,
    stack,
    swapaxes,
    take,
    tmean,
    tsum,
)


def finite_diff(forward, tensor, h=1e-6):
    """Central-difference gradient of a scalar closure wrt one tensor."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = forward().item()
        flat[i] = orig - h
        lo = forward().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def assert_grad_matches(forward, tensor, rtol=1e-6, atol=1e-7):
    tensor.grad = None
    loss = forward()
    loss.backward()
    numeric = finite_diff(forward, tensor)
    np.testing.assert_allclose(tensor.grad_or_zeros(), numeric, rtol=rtol, atol=atol)


# -- matmul -------------------------------------------------------------------


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, b).data, b.data)


def test_matmul_hand_case():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(5, 7))
    b = rng.normal(size=(7, 3))
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, atol=1e-12)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)  # broadcast over batch
    b = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
    w = rng.normal(size=(4, 2, 5))
    forward = lambda: tsum(matmul(a, b) * w)
    assert_grad_matches(forward, a)
    assert_grad_matches(forward, b)


# -- softmax / log_softmax ------------------------------------------------------


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_large_inputs_no_overflow():
    out = softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_matches_direct_formula():
    rng = np.random.default_rng(1)
    x = rng.normal(size=9)
    expected = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(Tensor(x)).data, expected, atol=1e-12)


def test_softmax_slices_sum_to_one_and_bounded():
    rng = np.random.default_rng(2)
    out = softmax(Tensor(rng.normal(scale=10, size=(7, 5, 11)))).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        softmax(Tensor([np.nan, 1.0]))


def test_softmax_gradient():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    w = rng.normal(size=(4, 6))
    assert_grad_matches(lambda: tsum(softmax(x) * w), x)


def test_log_softmax_gradient_and_value():
    rng = np.random.default_rng(4)
    raw = rng.normal(size=(3, 5))
    x = Tensor(raw, requires_grad=True)
    expected = raw - np.log(np.exp(raw).sum(axis=-1, keepdims=True))
    np.testing.assert_allclose(log_softmax(x).data, expected, atol=1e-12)
    w = rng.normal(size=(3, 5))
    assert_grad_matches(lambda: tsum(log_softmax(x) * w), x)


# -- backward / tape ---------------------------------------------------------


def test_backward_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_disconnected_parameter_gets_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    p = Tensor([5.0], requires_grad=True)
    tsum(x * x).backward()
    np.testing.assert_array_equal(p.grad_or_zeros(), [0.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * x).backward()


def test_repeated_backward_without_reset_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = tsum(x * x)
    tape = loss.backward()
    with pytest.raises(RuntimeError, match="reset"):
        tape.backward()


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    loss = tsum(softmax(matmul(x, y)) * rng.normal(size=(3, 3)))
    tape = Tape(loss)
    tape.backward()
    first = (x.grad.copy(), y.grad.copy())
    tape.reset()
    assert x.grad is None and y.grad is None
    tape.backward()
    assert np.array_equal(first[0], x.grad) and np.array_equal(first[1], y.grad)


def test_gradients_accumulate_across_losses():
    x = Tensor([1.0, 2.0], requires_grad=True)
    tsum(x * x).backward()
    tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_backward_returns_reverse_topological_tape():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    z = y + x
    tape = backward(z.sum())
    order = {id(t): i for i, t in enumerate(tape.nodes)}
    assert order[id(x)] < order[id(y)]
    assert order[id(y)] < order[id(tape.root)]


# -- structural and elementwise ops ----------------------------------------------


def test_add_mul_broadcast_gradients():
    rng = np.random.default_rng(10)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3,)), requires_grad=True)
    w = rng.normal(size=(4, 3))
    forward = lambda: tsum((a * b + b) * w)
    assert_grad_matches(forward, a)
    assert_grad_matches(forward, b)


def test_concat_and_take_gradients():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    forward = lambda: tsum(take(concat([a, b], axis=0), slice(1, 4)) * w)
    assert_grad_matches(forward, a)
    assert_grad_matches(forward, b)


def test_stack_matches_numpy():
    rng = np.random.default_rng(12)
    parts = [rng.normal(size=(2, 3)) for _ in range(4)]
    out = stack([Tensor(p) for p in parts], axis=0)
    np.testing.assert_array_equal(out.data, np.stack(parts, axis=0))


def test_reshape_swapaxes_power_mean_gradients():
    rng = np.random.default_rng(13)
    a = Tensor(rng.uniform(0.5, 2.0, size=(2, 3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 3))

    def forward():
        x = swapaxes(a, 1, 2)            # (2, 4, 3)
        x = power(x, 1.5)
        x = tmean(x, axis=0)             # (4, 3)
        return tsum(reshape(x, (3, 4)).swapaxes(0, 1) * w)

    assert_grad_matches(forward, a)


def test_gelu_value_and_gradient():
    from scipy.special import erf

    rng = np.random.default_rng(14)
    raw = rng.normal(size=17)
    expected = 0.5 * raw * (1 + erf(raw / np.sqrt(2)))
    x = Tensor(raw, requires_grad=True)
    np.testing.assert_allclose(gelu(x).data, expected, atol=1e-12)
    assert_grad_matches(lambda: tsum(gelu(x) * raw), x)


def test_forward_values_finite_on_finite_inputs():
    rng = np.random.default_rng(15)
    x = Tensor(rng.normal(scale=50, size=(6, 6)))
    for op in (softmax, log_softmax, gelu, lambda t: tmean(t * t)):
        assert np.all(np.isfinite(op(x).data))


def test_tensor_invariant_shape_matches_data():
    t = Tensor(np.arange(12.0).reshape(3, 4))
    assert int(np.prod(t.shape)) == t.data.size == t.size
