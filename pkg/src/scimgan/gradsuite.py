"""The named gradient-check sweep behind `check-grads` and the acceptance
suite: every loss and every layer type, finite-differenced over many seeds.

Each check builds a small randomized instance (seeded, deterministic) and
returns the max relative error between analytic and central-difference
gradients.  Checks are independent jobs; the sweep runs them on a thread
pool capped by SCIMGAN_THREADS and merges results in name order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import gan_losses as G
from . import reid as R
from . import tensor as T
from .gradcheck import finite_diff_check
from .layers import Conv2d, Dense, InstanceNorm, ResidualBlock, TransposedConv2d
from .reid import Margins
from .rng import Rng
from .runio import worker_count
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5


def _rand(rng, *shape, scale=1.0):
    return Tensor(scale * rng.normal(size=int(np.prod(shape))).reshape(shape))


def _probe(seed, shape):
    return Tensor(Rng(seed ^ 0x5EED).normal(size=int(np.prod(shape))).reshape(shape))


def _through(layer_forward, x, probe_seed):
    """Scalarize a layer output against a fixed random probe."""
    out = layer_forward(x)
    return T.mean(T.mul(out, _probe(probe_seed, out.shape)))


# -- layer checks (gradient w.r.t. input and w.r.t. weights) ----------------


def check_conv_input(seed):
    rng = Rng(seed)
    layer = Conv2d(2, 3, 3, 2, 1, rng.spawn("w"))
    return finite_diff_check(lambda t: _through(layer.forward, t, seed), _rand(rng, 1, 2, 6, 6), STEP)


def check_conv_weight(seed):
    rng = Rng(seed)
    x = _rand(rng, 1, 2, 5, 5)
    b = _rand(rng, 3, scale=0.1)
    return finite_diff_check(
        lambda w: T.mean(T.mul(T.conv2d(x, w, b, stride=1, padding=1), _probe(seed, (1, 3, 5, 5)))),
        _rand(rng, 3, 2, 3, 3, scale=0.3),
        STEP,
    )


def check_transposed_conv_input(seed):
    rng = Rng(seed)
    layer = TransposedConv2d(3, 2, 4, 2, 1, rng.spawn("w"))
    return finite_diff_check(lambda t: _through(layer.forward, t, seed), _rand(rng, 1, 3, 4, 4), STEP)


def check_transposed_conv_weight(seed):
    rng = Rng(seed)
    x = _rand(rng, 1, 2, 3, 3)
    return finite_diff_check(
        lambda w: T.mean(T.mul(T.transposed_conv2d(x, w, stride=2, padding=1), _probe(seed, (1, 2, 6, 6)))),
        _rand(rng, 2, 2, 4, 4, scale=0.3),
        STEP,
    )


def check_dense(seed):
    rng = Rng(seed)
    layer = Dense(6, 4, rng.spawn("w"))
    return finite_diff_check(lambda t: _through(layer.forward, t, seed), _rand(rng, 2, 6), STEP)


def check_instance_norm(seed):
    rng = Rng(seed)
    layer = InstanceNorm()
    return finite_diff_check(lambda t: _through(layer.forward, t, seed), _rand(rng, 1, 2, 4, 4), STEP)


def check_residual_block(seed):
    rng = Rng(seed)
    layer = ResidualBlock(2, 3, rng.spawn("w"))
    return finite_diff_check(lambda t: _through(layer.forward, t, seed), _rand(rng, 1, 2, 4, 4), STEP)


def check_activations(seed):
    rng = Rng(seed)
    worst = 0.0
    for op in (T.relu, lambda x: T.leaky_relu(x, 0.2), T.tanh, T.sigmoid, T.log_softmax):
        err = finite_diff_check(lambda t: T.mean(T.mul(op(t), _probe(seed, (2, 5)))), _rand(rng, 2, 5), STEP)
        worst = max(worst, err)
    return worst


# -- loss checks through small differentiable maps ---------------------------


def _toy_generator(seed):
    """4-pixel image -> 4-pixel image, two tanh layers."""
    w1 = _rand(Rng(seed ^ 1), 4, 4, scale=0.6)
    w2 = _rand(Rng(seed ^ 2), 4, 4, scale=0.6)

    def apply(img):
        h = T.tanh(T.matmul(T.reshape(img, (1, 4)), w1))
        return T.reshape(T.tanh(T.matmul(h, w2)), (1, 1, 2, 2))

    return apply


def check_adversarial_d_loss(seed):
    rng = Rng(seed)
    w = _rand(rng.spawn("d"), 4, 1, scale=0.7)
    x_fake = _rand(rng, 1, 1, 2, 2, scale=0.5)

    def d_loss(x_real):
        d_real = T.sigmoid(T.matmul(T.reshape(x_real, (1, 4)), w))
        d_fake = T.sigmoid(T.matmul(T.reshape(x_fake, (1, 4)), w))
        return T.mul(
            T.add(T.mean(T.log(T.clip(d_real, 1e-12, 1 - 1e-12))),
                  T.mean(T.log(T.clip(T.sub(1.0, d_fake), 1e-12, 1 - 1e-12)))),
            -1.0,
        )

    return finite_diff_check(d_loss, _rand(rng, 1, 1, 2, 2, scale=0.5), STEP)


def check_adversarial_g_loss(seed):
    rng = Rng(seed)
    gen = _toy_generator(seed)
    w = _rand(rng.spawn("d"), 4, 1, scale=0.7)

    def g_loss(x):
        fake = gen(x)
        d_fake = T.sigmoid(T.matmul(T.reshape(fake, (1, 4)), w))
        return T.mul(T.mean(T.log(T.clip(d_fake, 1e-12, 1 - 1e-12))), -1.0)

    return finite_diff_check(g_loss, _rand(rng, 1, 1, 2, 2, scale=0.5), STEP)


def _bundle_through_toys(seed, x):
    f_ab = _toy_generator(seed)
    f_ba = _toy_generator(seed + 1000)
    fake = f_ab(x)
    z_src = T.reshape(T.tanh(x), (4,))
    z_back = T.reshape(T.tanh(fake), (4,))
    rec = f_ba(fake)
    return G.TranslationBundle(x, z_src, fake, z_back, rec, 0, 1)


def check_cycle_loss(seed):
    rng = Rng(seed)
    other = _bundle_through_toys(seed + 7, _rand(Rng(seed + 3), 1, 1, 2, 2, scale=0.5))
    return finite_diff_check(
        lambda t: G.cycle_loss(_bundle_through_toys(seed, t), other),
        _rand(rng, 1, 1, 2, 2, scale=0.5),
        STEP,
    )


def check_identity_mapping_loss(seed):
    rng = Rng(seed)
    gen = _toy_generator(seed)
    x2 = _rand(Rng(seed + 3), 1, 1, 2, 2, scale=0.5)
    return finite_diff_check(
        lambda t: G.identity_mapping_loss(t, gen(t), x2, gen(x2)),
        _rand(rng, 1, 1, 2, 2, scale=0.5),
        STEP,
    )


def check_semantic_loss(seed):
    rng = Rng(seed)
    gen = _toy_generator(seed)

    def f(t):
        bundle = _bundle_through_toys(seed, t)
        return G.semantic_consistency_loss(bundle.z_src, bundle.z_back, bundle.z_src, bundle.z_back)

    return finite_diff_check(f, _rand(rng, 1, 1, 2, 2, scale=0.5), STEP)


def check_combined_objective(seed):
    rng = Rng(seed)
    w = _rand(rng.spawn("d"), 4, 1, scale=0.7)
    other = _bundle_through_toys(seed + 7, _rand(Rng(seed + 3), 1, 1, 2, 2, scale=0.5))

    def f(t):
        bundle = _bundle_through_toys(seed, t)
        d_fake = T.sigmoid(T.matmul(T.reshape(bundle.x_fake, (1, 4)), w))
        adv = T.mul(T.mean(T.log(T.clip(d_fake, 1e-12, 1 - 1e-12))), -1.0)
        cyc = G.cycle_loss(bundle, other)
        idm = G.identity_mapping_loss(bundle.x_src, bundle.x_fake, other.x_src, other.x_fake)
        sem = G.semantic_consistency_loss(bundle.z_src, bundle.z_back, other.z_src, other.z_back)
        return G.scimgan_objective(adv, adv, cyc, idm, sem, G.LossWeights(10.0, 0.1, 0.1))

    return finite_diff_check(f, _rand(rng, 1, 1, 2, 2, scale=0.5), STEP)


def _embed(seed):
    w = _rand(Rng(seed ^ 3), 4, 6, scale=0.6)

    def apply(x):
        return T.tanh(T.matmul(x, w))

    return apply


def check_improved_quartet_loss(seed):
    rng = Rng(seed)
    emb = _embed(seed)
    others = [emb(_rand(Rng(seed + k), 2, 4)) for k in (11, 12, 13)]
    margins = Margins(-1.0, 0.01)
    return finite_diff_check(
        lambda t: R.improved_quartet_loss(emb(t), *others, margins), _rand(rng, 2, 4), STEP
    )


def check_quartet_baseline_loss(seed):
    rng = Rng(seed)
    emb = _embed(seed)
    others = [emb(_rand(Rng(seed + k), 2, 4)) for k in (11, 12, 13)]
    return finite_diff_check(
        lambda t: R.quartet_loss_baseline(emb(t), *others, tau1=-1.0), _rand(rng, 2, 4), STEP
    )


def check_triplet_baseline_loss(seed):
    rng = Rng(seed)
    emb = _embed(seed)
    others = [emb(_rand(Rng(seed + k), 2, 4)) for k in (11, 12)]
    return finite_diff_check(
        lambda t: R.triplet_loss_baseline(emb(t), *others, margin=1.0), _rand(rng, 2, 4), STEP
    )


def check_identification_loss(seed):
    rng = Rng(seed)
    w = _rand(Rng(seed ^ 9), 4, 5, scale=0.8)
    return finite_diff_check(
        lambda t: R.identification_loss(T.matmul(t, w), [seed % 5, (seed + 2) % 5]),
        _rand(rng, 2, 4),
        STEP,
    )


CHECKS = {
    "layer/conv2d/input": check_conv_input,
    "layer/conv2d/weight": check_conv_weight,
    "layer/transposed_conv2d/input": check_transposed_conv_input,
    "layer/transposed_conv2d/weight": check_transposed_conv_weight,
    "layer/dense": check_dense,
    "layer/instance_norm": check_instance_norm,
    "layer/residual_block": check_residual_block,
    "layer/activations": check_activations,
    "loss/adversarial_d": check_adversarial_d_loss,
    "loss/adversarial_g": check_adversarial_g_loss,
    "loss/cycle": check_cycle_loss,
    "loss/identity_mapping": check_identity_mapping_loss,
    "loss/semantic_consistency": check_semantic_loss,
    "loss/combined_objective": check_combined_objective,
    "loss/improved_quartet": check_improved_quartet_loss,
    "loss/quartet_baseline": check_quartet_baseline_loss,
    "loss/triplet_baseline": check_triplet_baseline_loss,
    "loss/identification": check_identification_loss,
}


def run_suite(seeds=range(20), names=None, max_workers=None) -> list[tuple[str, float]]:
    """Run each named check over all seeds; returns (name, max rel error),
    sorted by name.  Parallel jobs each build their own tapes."""
    names = sorted(CHECKS) if names is None else list(names)
    jobs = [(name, seed) for name in names for seed in seeds]
    workers = max_workers if max_workers is not None else worker_count()

    def run_job(job):
        name, seed = job
        return CHECKS[name](seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(run_job, jobs))
    else:
        errors = [run_job(j) for j in jobs]
    worst: dict[str, float] = {name: 0.0 for name in names}
    for (name, _), err in zip(jobs, errors):
        worst[name] = max(worst[name], err)
    return sorted(worst.items())
