import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import scimgan.reid as R
import scimgan.tensor as T
from scimgan.gradcheck import finite_diff_check
from scimgan.reid import Margins
from scimgan.rng import Rng
from scimgan.tensor import Tape, Tensor, backward

TOL = 1e-9
M = Margins(tau1=-1.0, tau2=0.01)


def vec(*vals):
    return Tensor(list(map(float, vals)))


def test_improved_quartet_coincident_embeddings():
    f = vec(0.7, -0.2)
    loss = R.improved_quartet_loss(f, f, f, f, M)
    assert abs(loss.item() - 0.01) < TOL


def test_improved_quartet_worked_example_negative_regime():
    loss = R.improved_quartet_loss(vec(0, 0), vec(0, 0), vec(2, 0), vec(5, 0), M)
    assert abs(loss.item() - (-0.99)) < TOL


def test_improved_quartet_worked_example_active_regime():
    loss = R.improved_quartet_loss(vec(0, 0), vec(3, 0), vec(1, 0), vec(1, 1), M)
    assert abs(loss.item() - 25.0) < TOL


def test_quartet_baseline_values():
    f = vec(1.0, 1.0)
    assert abs(R.quartet_loss_baseline(f, f, f, f, tau1=0.0).item()) < TOL
    loss = R.quartet_loss_baseline(vec(0, 0), vec(0, 0), vec(2, 0), vec(5, 0), tau1=-1.0)
    assert abs(loss.item() - (-1.0)) < TOL


def test_improved_minus_baseline_is_term2():
    rng = Rng(0)
    for _ in range(100):
        fs = [Tensor(rng.normal(size=4)) for _ in range(4)]
        improved = R.improved_quartet_loss(*fs, M).item()
        baseline = R.quartet_loss_baseline(*fs, tau1=M.tau1).item()
        d12 = float(np.square(fs[0].values - fs[1].values).sum())
        term2 = max(d12, M.tau2)
        assert abs((improved - baseline) - term2) < 1e-12


def test_triplet_baseline_values():
    f1 = vec(0, 0)
    assert R.triplet_loss_baseline(f1, f1, vec(2, 0), margin=1.0).item() == 0.0
    loss = R.triplet_loss_baseline(vec(0, 0), vec(2, 0), vec(1, 0), margin=1.0)
    assert abs(loss.item() - 4.0) < TOL
    same = vec(1, 1)
    assert R.triplet_loss_baseline(f1, same, same, margin=0.0).item() == 0.0


def test_identification_loss_uniform_logits():
    loss = R.identification_loss(Tensor([2.0, 2.0, 2.0, 2.0]), 1)
    assert abs(loss.item() - math.log(4.0)) < TOL


def test_identification_loss_saturated():
    logits = Tensor([21.0, 1.0, 1.0])
    assert R.identification_loss(logits, 0).item() < 1e-8


def test_identification_loss_worked_softmax():
    loss = R.identification_loss(Tensor([1.0, 2.0, 3.0]), 2)
    expected = -math.log(math.exp(3.0) / (math.e + math.exp(2.0) + math.exp(3.0)))
    assert abs(loss.item() - expected) < TOL
    assert abs(loss.item() - 0.40760596) < 1e-7


def test_identification_loss_batched_mean():
    logits = Tensor([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    loss = R.identification_loss(logits, [2, 0])
    single = R.identification_loss(Tensor([1.0, 2.0, 3.0]), 2).item()
    assert abs(loss.item() - single) < TOL  # symmetric rows


def test_identification_target_out_of_range():
    with pytest.raises(ValueError):
        R.identification_loss(Tensor([1.0, 2.0]), 5)


def test_embedding_dimension_mismatch():
    with pytest.raises(T.ShapeError):
        R.improved_quartet_loss(vec(1, 2), vec(1, 2, 3), vec(1, 2), vec(1, 2), M)


def test_clamped_region_has_zero_gradient():
    # term1 argument far below tau1: every embedding gradient from term1 is 0
    f1 = Tensor([0.0, 0.0], requires_grad=True)
    f2 = Tensor([0.0, 0.0])
    f3 = Tensor([4.0, 0.0])
    f4 = Tensor([9.0, 0.0])
    with Tape() as tape:
        loss = R.quartet_loss_baseline(f1, f2, f3, f4, tau1=-1.0)
    backward(tape, loss)
    assert np.array_equal(f1.grad, [0.0, 0.0])


def test_gradcheck_improved_quartet_loss():
    for seed in range(10):
        rng = Rng(seed)
        others = [Tensor(rng.normal(size=8)) for _ in range(3)]

        def f(t):
            return R.improved_quartet_loss(t, others[0], others[1], others[2], M)

        err = finite_diff_check(f, Tensor(rng.normal(size=8)), step=1e-5)
        assert err <= 1e-4


def test_gradcheck_improved_quartet_batched():
    rng = Rng(77)
    others = [Tensor(rng.normal(size=12).reshape(3, 4)) for _ in range(3)]

    def f(t):
        return R.improved_quartet_loss(t, others[0], others[1], others[2], M)

    assert finite_diff_check(f, Tensor(rng.normal(size=12).reshape(3, 4))) <= 1e-4


@given(st.floats(min_value=-20.0, max_value=20.0))
def test_hinge_offset_equivalence(x):
    # max{x, tau} == max{x - tau, 0} + tau for all x
    tau = -1.0
    lhs = T.clamp_min(Tensor([x]), tau).values[0]
    rhs = T.clamp_min(Tensor([x - tau]), 0.0).values[0] + tau
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_hinge_offset_equivalence_gradients():
    for x in np.linspace(-3.0, 3.0, 61):
        if abs(x + 1.0) < 1e-9:
            continue  # the kink itself
        a = Tensor([float(x)], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(T.clamp_min(a, -1.0))
        backward(tape, loss)
        ga = a.grad.copy()
        b = Tensor([float(x) + 1.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(T.clamp_min(b, 0.0))
        backward(tape, loss)
        assert np.array_equal(ga, b.grad)


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=-3, max_value=3))
def test_translation_invariance(seed, shift):
    rng = Rng(seed)
    fs = [rng.normal(size=6) for _ in range(4)]
    base = R.improved_quartet_loss(*(Tensor(f) for f in fs), M).item()
    shifted = R.improved_quartet_loss(*(Tensor(f + shift) for f in fs), M).item()
    assert base == pytest.approx(shifted, abs=1e-9)


def test_batch_permutation_invariance():
    rng = Rng(11)
    fs = [rng.normal(size=20).reshape(5, 4) for _ in range(4)]
    base = R.improved_quartet_loss(*(Tensor(f) for f in fs), M).item()
    perm = [3, 1, 4, 0, 2]
    permuted = R.improved_quartet_loss(*(Tensor(f[perm]) for f in fs), M).item()
    assert abs(base - permuted) < 1e-12


def test_l2_normalize_rows():
    rng = Rng(12)
    x = Tensor(rng.normal(size=12).reshape(3, 4) * 5.0)
    normed = R.l2_normalize(x)
    norms = np.sqrt(np.square(normed.values).sum(axis=1))
    assert np.allclose(norms, 1.0, atol=1e-6)
