import numpy as np
import pytest

import scimgan.tensor as T
from scimgan.gradcheck import finite_diff_check
from scimgan.rng import Rng
from scimgan.tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
)


def randt(rng, *shape):
    return Tensor(rng.normal(size=int(np.prod(shape))).reshape(shape))


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(a, Tensor(np.eye(2)))
    assert np.array_equal(out.values, a.values)


def test_squared_l2_distance_coincident_is_zero():
    v = Tensor([0.3, -1.2, 5.0])
    assert T.squared_l2_distance(v, v).item() == 0.0


def test_squared_l2_distance_rowwise():
    a = Tensor([[0.0, 0.0], [1.0, 1.0]])
    b = Tensor([[3.0, 4.0], [1.0, 1.0]])
    assert np.allclose(T.squared_l2_distance(a, b).values, [25.0, 0.0])


def test_sum_backward_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones(3))


def test_squared_distance_backward_matches_2x():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = T.squared_l2_distance(x, Tensor([0.0]))
    backward(tape, loss)
    assert np.array_equal(x.grad, [6.0])


def test_grads_accumulate_across_uses():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.add(T.mul(x, x), x))  # x^2 + x -> 2x + 1 = 5
    backward(tape, loss)
    assert np.array_equal(x.grad, [5.0])


def test_backward_twice_bit_identical():
    rng = Rng(0)
    x = randt(rng, 4, 3)
    x.requires_grad = True
    w = randt(rng, 3, 2)
    w.requires_grad = True
    with Tape() as tape:
        loss = T.mean(T.tanh(T.matmul(x, w)))
    backward(tape, loss)
    g1 = (x.grad.copy(), w.grad.copy())
    backward(tape, loss)
    assert np.array_equal(g1[0], x.grad) and np.array_equal(g1[1], w.grad)


def test_linearity_of_grad():
    rng = Rng(1)
    base = rng.normal(size=6).reshape(2, 3)

    def grad_of(fn):
        x = Tensor(base, requires_grad=True)
        with Tape() as tape:
            loss = fn(x)
        backward(tape, loss)
        return x.grad

    gf = grad_of(lambda x: T.sum(T.mul(x, x)))
    gg = grad_of(lambda x: T.sum(x))
    combined = grad_of(lambda x: T.add(T.mul(T.sum(T.mul(x, x)), 2.0), T.mul(T.sum(x), -3.0)))
    assert np.array_equal(combined, 2.0 * gf - 3.0 * gg)


# ---------------------------------------------------------------------------
# error handling
# ---------------------------------------------------------------------------


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_non_finite_fails_fast():
    with pytest.raises(NonFiniteError):
        T.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_backward_needs_scalar_and_recorded_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = T.mul(x, 2.0)
    with pytest.raises(ShapeError):
        backward(tape, y)
    loose = T.sum(x)  # produced off-tape
    with pytest.raises(TapeError):
        backward(tape, loose)
    with pytest.raises(TapeError):
        backward(Tape(), loose)


def test_detach_blocks_gradient():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.mul(x.detach(), x))
    backward(tape, loss)
    assert np.array_equal(x.grad, [3.0])  # only the non-detached use


# ---------------------------------------------------------------------------
# gradient checks: every primitive, many random shapes/seeds
# ---------------------------------------------------------------------------

TOL = 1e-4


def _check(f, x, tol=TOL, step=1e-5):
    err = finite_diff_check(f, x, step=step)
    assert err <= tol, f"max relative error {err:.3e} > {tol}"


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_elementwise_chain(seed):
    rng = Rng(seed)
    shape = (rng.randint(3) + 1, rng.randint(4) + 1)
    other = randt(rng, *shape)
    x = randt(rng, *shape)
    _check(lambda t: T.mean(T.mul(T.add(t, other), T.sub(t, 0.5))), x)


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_matmul(seed):
    rng = Rng(100 + seed)
    n, m, k = rng.randint(4) + 1, rng.randint(4) + 1, rng.randint(4) + 1
    b = randt(rng, m, k)
    x = randt(rng, n, m)
    _check(lambda t: T.sum(T.matmul(t, b)), x)
    w = randt(rng, n, m)
    _check(lambda t: T.mean(T.matmul(w, t)), randt(rng, m, k))


@pytest.mark.parametrize(
    "op",
    [
        T.sigmoid,
        T.tanh,
        T.relu,
        lambda x: T.leaky_relu(x, 0.2),
        T.exp,
        T.log_softmax,
        T.abs_sum,
        lambda x: T.clamp_min(x, -0.1),
        lambda x: T.clip(x, -1.5, 1.5),
        T.mean,
        T.sum,
    ],
    ids=[
        "sigmoid",
        "tanh",
        "relu",
        "leaky_relu",
        "exp",
        "log_softmax",
        "abs_sum",
        "clamp_min",
        "clip",
        "mean",
        "sum",
    ],
)
@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_unary(op, seed):
    rng = Rng(200 + seed)
    x = randt(rng, 2, 5)
    _check(lambda t: T.sum(op(t)) if op is not T.sum else op(t), x)


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_log(seed):
    rng = Rng(300 + seed)
    x = Tensor(rng.random_array(8).reshape(2, 4) + 0.5)
    _check(lambda t: T.sum(T.log(t)), x)


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_squared_l2_distance(seed):
    rng = Rng(400 + seed)
    b = randt(rng, 3, 4)
    _check(lambda t: T.sum(T.squared_l2_distance(t, b)), randt(rng, 3, 4))


def test_conv2d_gradient_matches_finite_differences():
    # 1x1x4x4 input, one 3x3 kernel, stride 1: tight tolerance
    rng = Rng(7)
    w = randt(rng, 1, 1, 3, 3)
    x = randt(rng, 1, 1, 4, 4)
    err = finite_diff_check(lambda t: T.sum(T.conv2d(t, w, stride=1, padding=0)), x, step=1e-5)
    assert err <= 1e-6


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_gradcheck_conv2d_all_inputs(seed, stride, padding):
    rng = Rng(500 + seed)
    x = randt(rng, 2, 3, 5, 5)
    w = randt(rng, 4, 3, 3, 3)
    b = randt(rng, 4)
    _check(lambda t: T.mean(T.conv2d(t, w, b, stride=stride, padding=padding)), x)
    _check(lambda t: T.mean(T.conv2d(x, t, b, stride=stride, padding=padding)), w)
    _check(lambda t: T.mean(T.conv2d(x, w, t, stride=stride, padding=padding)), b)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (2, 1, 4), (2, 1, 3)])
def test_gradcheck_transposed_conv2d_all_inputs(seed, stride, padding, k):
    rng = Rng(600 + seed)
    x = randt(rng, 2, 3, 4, 4)
    w = randt(rng, 3, 2, k, k)
    b = randt(rng, 2)
    _check(lambda t: T.mean(T.transposed_conv2d(t, w, b, stride=stride, padding=padding)), x)
    _check(lambda t: T.mean(T.transposed_conv2d(x, t, b, stride=stride, padding=padding)), w)
    _check(lambda t: T.mean(T.transposed_conv2d(x, w, t, stride=stride, padding=padding)), b)


def test_transposed_conv2d_doubles_spatial_size():
    x = Tensor(np.zeros((1, 4, 4, 4)))
    w = Tensor(np.zeros((4, 2, 4, 4)))
    out = T.transposed_conv2d(x, w, stride=2, padding=1)
    assert out.shape == (1, 2, 8, 8)


@pytest.mark.parametrize("seed", range(6))
def test_gradcheck_instance_norm(seed):
    rng = Rng(700 + seed)
    x = randt(rng, 2, 3, 4, 4)
    _check(lambda t: T.mean(T.mul(T.instance_norm(t), randt(Rng(seed), 2, 3, 4, 4))), x)


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_reshape_narrow(seed):
    rng = Rng(800 + seed)
    x = randt(rng, 4, 6)
    _check(lambda t: T.sum(T.mul(T.reshape(t, (2, 12)), 1.5)), x)
    _check(lambda t: T.mean(T.narrow(t, 1, 2)), x)


def test_clamp_tie_takes_zero_branch():
    x = Tensor([0.0, -1.0, 1.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.clamp_min(x, 0.0))
    backward(tape, loss)
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])
    y = Tensor([0.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.relu(y))
    backward(tape, loss)
    assert np.array_equal(y.grad, [0.0])
