"""Loss terms for multi-domain translation training.

Five scalar objectives over a pair of domains:

* adversarial (per direction): discriminator cross-entropy vs. the generator
  term; the generator default is the non-saturating -log D(fake) form, with
  the saturating +log(1 - D(fake)) form available for fidelity experiments;
* cycle consistency: pixel L1 between each image and its two-hop
  reconstruction, both directions;
* identity mapping: pixel L1 tying each translated image to its own source;
* semantic consistency: the same L1 applied to encoder embeddings, forcing
  the latent extracted before and after translation to agree;
* the combined objective: both adversarial terms plus the three weighted
  consistency terms.

All L1 terms are means over elements rather than sums, so the weights are
resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import Tensor

LOG_EPS = 1e-12


@dataclass
class LossWeights:
    """Multipliers for the cycle, identity-mapping, and semantic terms."""

    lambda_cyc: float = 10.0
    lambda_id: float = 0.1
    lambda_sem: float = 0.1

    def __post_init__(self):
        if min(self.lambda_cyc, self.lambda_id, self.lambda_sem) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TranslationBundle:
    """Everything produced by one direction of a translation pass.

    x_src -> z_src = Enc_src(x_src) -> x_fake = Dec_dst(z_src)
          -> z_back = Enc_dst(x_fake) -> x_rec = Dec_src(z_back)
    """

    x_src: Tensor
    z_src: Tensor
    x_fake: Tensor
    z_back: Tensor
    x_rec: Tensor
    src_domain: int
    dst_domain: int

    def __post_init__(self):
        if self.x_rec.shape != self.x_src.shape:
            raise T.ShapeError("reconstruction shape differs from source")
        if self.z_back.shape != self.z_src.shape:
            raise T.ShapeError("latent shapes differ across the cycle")


def mean_l1(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if a.shape != b.shape:
        raise T.ShapeError(f"L1 operands differ: {a.shape} vs {b.shape}")
    return T.mul(T.abs_sum(T.sub(a, b)), 1.0 / a.size)


def _mean_log(d_out: Tensor) -> Tensor:
    return T.mean(T.log(T.clip(d_out, LOG_EPS, 1.0 - LOG_EPS)))


def adversarial_losses(
    bundle: TranslationBundle,
    discriminator_dst,
    x_real_dst: Tensor,
    generator_form: str = "non_saturating",
) -> tuple[Tensor, Tensor]:
    """Discriminator and generator losses for one translation direction.

    d_loss = -[log D(real) + log(1 - D(fake_detached))]; the fake is detached
    so a discriminator step cannot move the generator.  g_loss is
    -log D(fake) by default (non-saturating), or +log(1 - D(fake)) when
    generator_form == "saturating".
    """
    d_real = discriminator_dst.forward(x_real_dst)
    d_fake_detached = discriminator_dst.forward(bundle.x_fake.detach())
    d_loss = T.mul(T.add(_mean_log(d_real), _mean_log(T.sub(1.0, d_fake_detached))), -1.0)

    d_fake = discriminator_dst.forward(bundle.x_fake)
    if generator_form == "non_saturating":
        g_loss = T.mul(_mean_log(d_fake), -1.0)
    elif generator_form == "saturating":
        g_loss = _mean_log(T.sub(1.0, d_fake))
    else:
        raise ValueError(f"unknown generator_form '{generator_form}'")
    return d_loss, g_loss


def minimax_objective_value(d_real: Tensor, d_fake: Tensor) -> float:
    """Raw value of the adversarial min-max objective (reported, not trained)."""
    real = _mean_log(d_real)
    fake = _mean_log(T.sub(1.0, d_fake))
    return T.add(real, fake).item()


def cycle_loss(bundle_fwd: TranslationBundle, bundle_bwd: TranslationBundle) -> Tensor:
    """Two-hop reconstruction L1, summed over both directions."""
    return T.add(
        mean_l1(bundle_fwd.x_rec, bundle_fwd.x_src),
        mean_l1(bundle_bwd.x_rec, bundle_bwd.x_src),
    )


def identity_mapping_loss(x_src: Tensor, x_fake: Tensor, x_src2: Tensor, x_fake2: Tensor) -> Tensor:
    """L1 between each translated image and its own source, both directions.

    This is the literal translated-vs-source form: it directly penalizes any
    appearance drift of the depicted subject.
    """
    return T.add(mean_l1(x_fake, x_src), mean_l1(x_fake2, x_src2))


def semantic_consistency_loss(z_src: Tensor, z_back: Tensor, z_src2: Tensor, z_back2: Tensor) -> Tensor:
    """L1 between pre- and post-translation embeddings, both directions."""
    return T.add(mean_l1(z_back, z_src), mean_l1(z_back2, z_src2))


def scimgan_objective(
    adv_fwd: Tensor,
    adv_bwd: Tensor,
    cyc: Tensor,
    idm: Tensor,
    sem: Tensor,
    weights: LossWeights,
) -> Tensor:
    """adv_fwd + adv_bwd + lambda_cyc*cyc + lambda_id*idm + lambda_sem*sem."""
    total = T.add(adv_fwd, adv_bwd)
    total = T.add(total, T.mul(cyc, weights.lambda_cyc))
    total = T.add(total, T.mul(idm, weights.lambda_id))
    return T.add(total, T.mul(sem, weights.lambda_sem))
