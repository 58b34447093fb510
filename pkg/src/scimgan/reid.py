"""Verification and identification losses, quartet sampling, and the
four-stream training step for the re-identification backbone.

The improved quartet verification loss over embeddings (f1 anchor, f2
positive sharing f1's identity, f3/f4 two different negatives), with squared
Euclidean distances d2:

    term1 = max{ d2(f1,f2) - d2(f1,f3) + d2(f1,f2) - d2(f4,f3), tau1 }
    term2 = max{ d2(f1,f2), tau2 }
    loss  = mean over the batch of (term1 + term2)

The positive-pair distance appears twice in term1 to balance the two negative
pairs: (f1,f3) shares the anchor, (f4,f3) shares nothing with the positive
pair.  term2 additionally caps the absolute intra-class distance, which the
plain quartet loss (term1 alone) leaves unconstrained.  Baseline quartet and
triplet losses are provided for ablations.

Identification is per-stream softmax cross-entropy over identity labels; all
four streams run through one shared backbone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import ImageDataset, ImageSample
from .networks import ReidBackbone
from .optim import SGD
from .rng import Rng
from .tensor import Tape, Tensor, backward

VERIFICATION_LOSSES = ("improved_quartet", "quartet", "triplet")


@dataclass
class Margins:
    """tau1 bounds the relative (intra vs inter) term, tau2 the absolute
    intra-class distance.  No ordering between them is enforced; the
    reference values are tau1=-1, tau2=0.01."""

    tau1: float = -1.0
    tau2: float = 0.01


def _require_same_shape(*tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise T.ShapeError(f"embedding shapes differ: {sorted(shapes)}")


def improved_quartet_loss(f1: Tensor, f2: Tensor, f3: Tensor, f4: Tensor, margins: Margins) -> Tensor:
    _require_same_shape(f1, f2, f3, f4)
    d12 = T.squared_l2_distance(f1, f2)
    d13 = T.squared_l2_distance(f1, f3)
    d43 = T.squared_l2_distance(f4, f3)
    term1 = T.clamp_min(T.add(T.sub(d12, d13), T.sub(d12, d43)), margins.tau1)
    term2 = T.clamp_min(d12, margins.tau2)
    return T.mean(T.add(term1, term2))


def quartet_loss_baseline(f1: Tensor, f2: Tensor, f3: Tensor, f4: Tensor, tau1: float) -> Tensor:
    """Relative term only; improved_quartet_loss minus this equals term2."""
    _require_same_shape(f1, f2, f3, f4)
    d12 = T.squared_l2_distance(f1, f2)
    d13 = T.squared_l2_distance(f1, f3)
    d43 = T.squared_l2_distance(f4, f3)
    return T.mean(T.clamp_min(T.add(T.sub(d12, d13), T.sub(d12, d43)), tau1))


def triplet_loss_baseline(f1: Tensor, f2: Tensor, f3: Tensor, margin: float) -> Tensor:
    """max{ d2(f1,f2) - d2(f1,f3) + margin, 0 }, batch mean."""
    _require_same_shape(f1, f2, f3)
    d12 = T.squared_l2_distance(f1, f2)
    d13 = T.squared_l2_distance(f1, f3)
    return T.mean(T.clamp_min(T.add(T.sub(d12, d13), margin), 0.0))


def identification_loss(logits: Tensor, target_class) -> Tensor:
    """Softmax cross-entropy: -log p_hat[target], averaged over rows."""
    if len(logits.shape) == 1:
        rows, classes = 1, logits.shape[0]
        targets = np.asarray([target_class], dtype=np.int64)
    elif len(logits.shape) == 2:
        rows, classes = logits.shape
        targets = np.asarray(target_class, dtype=np.int64)
        if targets.shape != (rows,):
            raise T.ShapeError(f"need {rows} targets, got {targets.shape}")
    else:
        raise T.ShapeError(f"logits must be rank 1 or 2, got {logits.shape}")
    if targets.min() < 0 or targets.max() >= classes:
        raise ValueError(f"target class out of range [0, {classes})")
    onehot = np.zeros((rows, classes))
    onehot[np.arange(rows), targets] = 1.0
    if len(logits.shape) == 1:
        onehot = onehot[0]
    picked = T.sum(T.mul(T.log_softmax(logits), onehot))
    return T.mul(picked, -1.0 / rows)


def l2_normalize(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise unit-norm embeddings (optional; off by default)."""
    sq = T.squared_l2_distance(t, np.zeros(t.shape))
    inv = T.exp(T.mul(T.log(T.add(sq, eps)), -0.5))
    if len(t.shape) == 2:
        inv = T.reshape(inv, (t.shape[0], 1))
    return T.mul(t, inv)


# ---------------------------------------------------------------------------
# quartets
# ---------------------------------------------------------------------------


@dataclass
class Quartet:
    anchor: ImageSample
    positive: ImageSample
    negative1: ImageSample
    negative2: ImageSample

    def validate(self, strict: bool = True) -> None:
        a, p, n1, n2 = self.anchor, self.positive, self.negative1, self.negative2
        if a.identity != p.identity:
            raise ValueError("positive must share the anchor identity")
        if a is p:
            raise ValueError("anchor and positive must be distinct samples")
        if n1.identity == a.identity:
            raise ValueError("negative1 must not share the anchor identity")
        if n2.identity == n1.identity:
            raise ValueError("negative2 must not share negative1's identity")
        if strict and n2.identity == a.identity:
            raise ValueError("negative2 must not share the anchor identity (strict mode)")


class QuartetSampler:
    """Uniform quartet sampling with synthetic-positive preference.

    The positive is a translated (synthetic) sample of the anchor's identity
    with probability ``synth_positive_prob`` when one exists, otherwise a
    real one.  Anchors and negatives are always real.  Negative identities
    are drawn identity-uniform.
    """

    def __init__(self, dataset: ImageDataset, synth_positive_prob: float, strict: bool = True):
        if not (0.0 <= synth_positive_prob <= 1.0):
            raise ValueError("synth_positive_prob must be a probability")
        self.synth_positive_prob = synth_positive_prob
        self.strict = strict
        self.real_by_id: dict[int, list[ImageSample]] = {}
        self.synth_by_id: dict[int, list[ImageSample]] = {}
        total_by_id: dict[int, int] = {}
        for s in dataset.samples:
            pool = self.synth_by_id if s.is_synthetic else self.real_by_id
            pool.setdefault(s.identity, []).append(s)
            total_by_id[s.identity] = total_by_id.get(s.identity, 0) + 1
        self.identities = sorted(i for i in self.real_by_id)
        if len(self.identities) < 3:
            raise ValueError("need at least 3 identities with real samples")
        for i in self.identities:
            if total_by_id[i] < 2:
                raise ValueError(f"identity {i} has fewer than 2 samples")

    def sample(self, rng: Rng) -> Quartet:
        anchor_id = self.identities[rng.randint(len(self.identities))]
        anchor = rng.choice(self.real_by_id[anchor_id])

        synth_pool = self.synth_by_id.get(anchor_id, [])
        real_pool = [s for s in self.real_by_id[anchor_id] if s is not anchor]
        use_synth = bool(synth_pool) and (rng.random() < self.synth_positive_prob or not real_pool)
        positive = rng.choice(synth_pool if use_synth else real_pool)

        others = [i for i in self.identities if i != anchor_id]
        neg1_id = others[rng.randint(len(others))]
        negative1 = rng.choice(self.real_by_id[neg1_id])

        if self.strict:
            pool2 = [i for i in self.identities if i not in (anchor_id, neg1_id)]
        else:
            pool2 = [i for i in self.identities if i != neg1_id]
        neg2_id = pool2[rng.randint(len(pool2))]
        negative2 = rng.choice(self.real_by_id[neg2_id])

        quartet = Quartet(anchor, positive, negative1, negative2)
        quartet.validate(strict=self.strict)
        return quartet


def sample_quartet(
    dataset: ImageDataset, rng: Rng, synth_positive_prob: float, strict: bool = True
) -> Quartet:
    return QuartetSampler(dataset, synth_positive_prob, strict).sample(rng)


# ---------------------------------------------------------------------------
# training step
# ---------------------------------------------------------------------------


@dataclass
class ReidLossReport:
    verif: float
    ident: float
    total: float


def reid_train_step(
    backbone: ReidBackbone,
    quartet_batch: list[Quartet],
    margins: Margins,
    weight_verif: float,
    weight_ident: float,
    optimizer: SGD,
    verification_loss: str = "improved_quartet",
    triplet_margin: float = 1.0,
    normalize_embeddings: bool = False,
    class_index: dict[int, int] | None = None,
) -> ReidLossReport:
    """One shared-backbone update over a batch of quartets.

    All four streams pass through the backbone as one 4B batch; identification
    cross-entropy applies to every stream against its own identity.
    """
    if verification_loss not in VERIFICATION_LOSSES:
        raise ValueError(f"verification_loss must be one of {VERIFICATION_LOSSES}")
    b = len(quartet_batch)
    if b == 0:
        raise ValueError("empty quartet batch")
    streams = [
        [q.anchor for q in quartet_batch],
        [q.positive for q in quartet_batch],
        [q.negative1 for q in quartet_batch],
        [q.negative2 for q in quartet_batch],
    ]
    flat = [s for stream in streams for s in stream]
    images = np.stack([s.image for s in flat])
    if class_index is None:
        targets = [s.identity for s in flat]
    else:
        targets = [class_index[s.identity] for s in flat]

    with Tape() as tape:
        verif_all, logits = backbone.forward_reid(Tensor(images))
        if normalize_embeddings:
            verif_all = l2_normalize(verif_all)
        f1 = T.narrow(verif_all, 0, b)
        f2 = T.narrow(verif_all, b, b)
        f3 = T.narrow(verif_all, 2 * b, b)
        f4 = T.narrow(verif_all, 3 * b, b)
        if verification_loss == "improved_quartet":
            lv = improved_quartet_loss(f1, f2, f3, f4, margins)
        elif verification_loss == "quartet":
            lv = quartet_loss_baseline(f1, f2, f3, f4, margins.tau1)
        else:
            lv = triplet_loss_baseline(f1, f2, f3, triplet_margin)
        li = identification_loss(logits, targets)
        total = T.add(T.mul(lv, weight_verif), T.mul(li, weight_ident))
    optimizer.zero_grad()
    backward(tape, total)
    optimizer.step()
    return ReidLossReport(verif=lv.item(), ident=li.item(), total=total.item())


class ReidTrainer:
    """Step loop over sampled quartet batches, resumable via (rng state, step)."""

    def __init__(
        self,
        backbone: ReidBackbone,
        train_dataset: ImageDataset,
        config,
        verification_loss: str = "improved_quartet",
        rng: Rng | None = None,
    ):
        self.backbone = backbone
        self.config = config
        self.verification_loss = verification_loss
        self.margins = Margins(config.tau1, config.tau2)
        self.sampler = QuartetSampler(train_dataset, config.synth_positive_prob, config.strict_quartets)
        ids = sorted({s.identity for s in train_dataset.samples})
        if len(ids) != backbone.n_identities:
            raise ValueError(
                f"backbone head has {backbone.n_identities} classes but dataset has {len(ids)} identities"
            )
        self.class_index = {identity: k for k, identity in enumerate(ids)}
        self.optimizer = SGD(backbone.parameters(), config.lr_reid, config.sgd_momentum)
        self.rng = rng if rng is not None else Rng(config.seed).spawn("reid-sampling")
        self.step = 0
        self.history: list[ReidLossReport] = []

    def run_steps(self, n_steps: int) -> None:
        for _ in range(n_steps):
            batch = [self.sampler.sample(self.rng) for _ in range(self.config.reid_batch)]
            report = reid_train_step(
                self.backbone,
                batch,
                self.margins,
                self.config.weight_verif,
                self.config.weight_ident,
                self.optimizer,
                verification_loss=self.verification_loss,
                triplet_margin=self.config.triplet_margin,
                normalize_embeddings=self.config.normalize_embeddings,
                class_index=self.class_index,
            )
            self.history.append(report)
            self.step += 1
