import numpy as np
import pytest

import scimgan.tensor as T
from scimgan.gradcheck import NonDeterministicFunction, finite_diff_check
from scimgan.tensor import Tensor


def test_quadratic_is_tight():
    err = finite_diff_check(lambda t: T.sum(T.mul(t, t)), Tensor([3.0]), step=1e-5)
    assert err <= 1e-6


def test_detects_wrong_gradient():
    # exp forward with tanh-like magnitude: numeric and analytic agree;
    # deliberately break the comparison by checking a mismatched function pair
    def f(t):
        return T.sum(T.mul(t.detach(), t))  # analytic grad = t, true grad = 2t

    err = finite_diff_check(f, Tensor([1.0, 2.0]), step=1e-5)
    assert err > 0.1


def test_skips_kink_boundary_coordinates():
    # relu argument sits exactly on the kink: coordinate must be skipped
    err = finite_diff_check(lambda t: T.sum(T.relu(t)), Tensor([0.0]), step=1e-5)
    assert err == 0.0


def test_deep_inside_clamp_gradient_is_zero():
    # hinge argument far below the threshold: analytic gradient exactly 0
    x = Tensor([-5.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum(T.clamp_min(x, -1.0))
    T.backward(tape, loss)
    assert np.array_equal(x.grad, [0.0])
    err = finite_diff_check(lambda t: T.sum(T.clamp_min(t, -1.0)), Tensor([-5.0]))
    assert err == 0.0


def test_nondeterminism_detected():
    calls = []

    def f(t):
        calls.append(1)
        return T.sum(T.mul(t, float(len(calls))))

    with pytest.raises(NonDeterministicFunction):
        finite_diff_check(f, Tensor([1.0]))


def test_rejects_non_scalar_f():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: T.mul(t, 2.0), Tensor([1.0, 2.0]))


def test_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: T.sum(t), Tensor([1.0]), step=0.0)
