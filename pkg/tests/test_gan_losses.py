import math

import numpy as np
import pytest

import scimgan.gan_losses as G
import scimgan.tensor as T
from scimgan.gradcheck import finite_diff_check
from scimgan.rng import Rng
from scimgan.tensor import Tape, Tensor, backward

TOL = 1e-9


class ConstantDiscriminator:
    """Toy network stand-in emitting a fixed score for every image."""

    def __init__(self, value):
        self.value = value

    def forward(self, x):
        return T.mul(T.mean(T.mul(x, 0.0)) + 1.0, self.value)


def dummy_bundle(x_src, x_fake, x_rec=None, z_src=None, z_back=None):
    x_rec = x_rec if x_rec is not None else x_src
    z_src = z_src if z_src is not None else Tensor([0.0])
    z_back = z_back if z_back is not None else z_src
    return G.TranslationBundle(x_src, z_src, x_fake, z_back, x_rec, 0, 1)


def test_adversarial_losses_at_half():
    x = Tensor(np.zeros((1, 1, 2, 2)))
    bundle = dummy_bundle(x, x)
    d_loss, g_loss = G.adversarial_losses(bundle, ConstantDiscriminator(0.5), x)
    assert abs(d_loss.item() - 2.0 * math.log(2.0)) < TOL
    assert abs(g_loss.item() - math.log(2.0)) < TOL


def test_adversarial_losses_confident_discriminator():
    x = Tensor(np.zeros((1, 1, 2, 2)))

    class SplitDisc:
        def __init__(self):
            self.calls = 0

        def forward(self, t):
            # real first, then detached fake, then fake
            self.calls += 1
            value = 0.99 if self.calls == 1 else 0.01
            return T.mul(T.mean(T.mul(t, 0.0)) + 1.0, value)

    d_loss, g_loss = G.adversarial_losses(dummy_bundle(x, x), SplitDisc(), x)
    assert abs(d_loss.item() - 0.0201007) < 1e-6
    assert abs(g_loss.item() - 4.6051702) < 1e-6


def test_minimax_objective_value_at_half():
    half = Tensor([0.5])
    assert abs(G.minimax_objective_value(half, half) - 2.0 * math.log(0.5)) < TOL


def test_saturating_form_flips_sign_structure():
    x = Tensor(np.zeros((1, 1, 2, 2)))
    _, g_sat = G.adversarial_losses(dummy_bundle(x, x), ConstantDiscriminator(0.5), x, generator_form="saturating")
    assert abs(g_sat.item() - math.log(0.5)) < TOL
    with pytest.raises(ValueError):
        G.adversarial_losses(dummy_bundle(x, x), ConstantDiscriminator(0.5), x, generator_form="wgan")


def test_cycle_loss_identity_maps_zero():
    x = Tensor(np.full((1, 3, 4, 4), 0.2))
    y = Tensor(np.full((1, 3, 4, 4), -0.4))
    assert G.cycle_loss(dummy_bundle(x, x, x_rec=x), dummy_bundle(y, y, x_rec=y)).item() == 0.0


def test_cycle_loss_single_pixel():
    src = Tensor(np.full((1, 1, 1, 1), 0.2))
    rec = Tensor(np.full((1, 1, 1, 1), 0.5))
    other = Tensor(np.full((1, 1, 1, 1), 0.7))
    loss = G.cycle_loss(dummy_bundle(src, src, x_rec=rec), dummy_bundle(other, other, x_rec=other))
    assert abs(loss.item() - 0.3) < TOL


def test_cycle_loss_matches_elementwise_oracle():
    rng = Rng(3)
    a = rng.uniform(-1, 1, size=48).reshape(1, 3, 4, 4)
    b = rng.uniform(-1, 1, size=48).reshape(1, 3, 4, 4)
    c = rng.uniform(-1, 1, size=48).reshape(1, 3, 4, 4)
    d = rng.uniform(-1, 1, size=48).reshape(1, 3, 4, 4)
    loss = G.cycle_loss(
        dummy_bundle(Tensor(a), Tensor(a), x_rec=Tensor(b)),
        dummy_bundle(Tensor(c), Tensor(c), x_rec=Tensor(d)),
    )
    oracle = np.abs(b - a).mean() + np.abs(d - c).mean()
    assert abs(loss.item() - oracle) < TOL


def test_identity_mapping_loss_values():
    x = Tensor(np.full((1, 1, 2, 2), 0.1))
    same = G.identity_mapping_loss(x, x, x, x)
    assert same.item() == 0.0
    shifted = Tensor(np.full((1, 1, 2, 2), 0.2))
    loss = G.identity_mapping_loss(x, shifted, x, x)
    assert abs(loss.item() - 0.1) < TOL


def test_identity_mapping_matches_elementwise_oracle():
    rng = Rng(4)
    xs = [rng.uniform(-1, 1, size=27).reshape(1, 3, 3, 3) for _ in range(4)]
    loss = G.identity_mapping_loss(*(Tensor(v) for v in xs))
    oracle = np.abs(xs[1] - xs[0]).mean() + np.abs(xs[3] - xs[2]).mean()
    assert abs(loss.item() - oracle) < TOL


def test_semantic_loss_worked_example():
    z1 = Tensor([1.0, 2.0])
    zb1 = Tensor([1.0, 4.0])
    z2 = Tensor([0.3, -0.3])
    loss = G.semantic_consistency_loss(z1, zb1, z2, z2)
    assert abs(loss.item() - 1.0) < TOL
    assert G.semantic_consistency_loss(z1, z1, z2, z2).item() == 0.0


def test_semantic_loss_matches_elementwise_oracle():
    rng = Rng(5)
    zs = [rng.normal(size=10) for _ in range(4)]
    loss = G.semantic_consistency_loss(*(Tensor(v) for v in zs))
    oracle = np.abs(zs[1] - zs[0]).mean() + np.abs(zs[3] - zs[2]).mean()
    assert abs(loss.item() - oracle) < TOL


def test_combined_objective_weighted_sum():
    w = G.LossWeights(10.0, 0.1, 0.1)
    val = G.scimgan_objective(
        Tensor(-1.3863), Tensor(-1.3863), Tensor(0.3), Tensor(0.3), Tensor(0.1), w
    ).item()
    assert abs(val - 0.2674) < 1e-4
    zero = G.scimgan_objective(Tensor(0.0), Tensor(0.0), Tensor(0.0), Tensor(0.0), Tensor(0.0), w)
    assert zero.item() == 0.0
    pure_adv = G.scimgan_objective(
        Tensor(1.5), Tensor(0.5), Tensor(9.0), Tensor(9.0), Tensor(9.0), G.LossWeights(0.0, 0.0, 0.0)
    )
    assert abs(pure_adv.item() - 2.0) < TOL


def test_weight_homogeneity():
    rng = Rng(6)
    parts = [Tensor(float(v)) for v in rng.uniform(0.1, 2.0, size=5)]
    base = G.scimgan_objective(*parts, G.LossWeights(1.0, 1.0, 1.0)).item()
    tripled_cyc = G.scimgan_objective(*parts, G.LossWeights(3.0, 1.0, 1.0)).item()
    cyc = parts[2].item()
    assert abs((tripled_cyc - base) - 2.0 * cyc) < TOL


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        G.LossWeights(-1.0, 0.1, 0.1)


def test_l1_zero_iff_equal():
    rng = Rng(7)
    a = Tensor(rng.normal(size=12).reshape(3, 4))
    b = Tensor(a.values + 1e-9)
    assert G.mean_l1(a, a).item() == 0.0
    assert G.mean_l1(a, b).item() > 0.0
    with pytest.raises(T.ShapeError):
        G.mean_l1(a, Tensor(np.zeros((2, 4))))


def test_d_loss_minimized_by_perfect_discrimination():
    # frozen one-parameter discriminator: score = sigmoid(theta)
    def d_loss_at(real_score, fake_score):
        real = Tensor([real_score])
        fake = Tensor([fake_score])
        return T.mul(
            T.add(T.mean(T.log(T.clip(real, 1e-12, 1 - 1e-12))),
                  T.mean(T.log(T.clip(T.sub(1.0, fake), 1e-12, 1 - 1e-12)))),
            -1.0,
        ).item()

    near_perfect = d_loss_at(1.0 - 1e-9, 1e-9)
    assert near_perfect < 1e-6
    assert d_loss_at(0.5, 0.5) > near_perfect
    # g_loss minimized by fooling the discriminator
    g = lambda s: -math.log(max(s, 1e-12))
    assert g(1.0) < g(0.5) < g(0.01)


def test_all_losses_pass_gradient_checks_through_toy_nets():
    # 2-layer toy maps; checks the chain rule through every loss
    rng = Rng(8)

    def toy_map(seed, out_shape):
        w = Tensor(Rng(seed).normal(0, 0.5, size=16).reshape(4, 4))

        def apply(x):
            flat = T.reshape(x, (1, 4))
            h = T.tanh(T.matmul(flat, w))
            return T.reshape(T.tanh(T.matmul(h, w)), out_shape)

        return apply

    f_ab = toy_map(1, (1, 1, 2, 2))
    f_ba = toy_map(2, (1, 1, 2, 2))
    x0 = Tensor(rng.uniform(-0.9, 0.9, size=4).reshape(1, 1, 2, 2))

    def cycle_fn(t):
        fake = f_ab(t)
        rec = f_ba(fake)
        fwd = dummy_bundle(t, fake, x_rec=rec)
        other = dummy_bundle(x0, f_ba(x0), x_rec=f_ab(f_ba(x0)))
        return G.cycle_loss(fwd, other)

    assert finite_diff_check(cycle_fn, x0, step=1e-5) <= 1e-4

    def combined_fn(t):
        fake = f_ab(t)
        z_src = T.reshape(T.tanh(t), (4,))
        z_back = T.reshape(T.tanh(fake), (4,))
        rec = f_ba(fake)
        adv = T.mul(T.mean(T.log(T.clip(T.sigmoid(fake), 1e-12, 1 - 1e-12))), -1.0)
        fwd = dummy_bundle(t, fake, x_rec=rec, z_src=z_src, z_back=z_back)
        bwd = dummy_bundle(x0, f_ba(x0), x_rec=f_ab(f_ba(x0)))
        cyc = G.cycle_loss(fwd, bwd)
        idm = G.identity_mapping_loss(t, fake, x0, f_ba(x0))
        sem = G.semantic_consistency_loss(z_src, z_back, z_src, z_src)
        return G.scimgan_objective(adv, adv, cyc, idm, sem, G.LossWeights(10.0, 0.1, 0.1))

    assert finite_diff_check(combined_fn, x0, step=1e-5) <= 1e-4
