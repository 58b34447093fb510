"""Embedding extraction, CMC ranking, cross-domain protocol, and the
ablation runner.

Identification accuracy is reported as a cumulative match characteristic:
ranks[k-1] is the fraction of probes whose true identity appears within the
top-k gallery entries under ascending squared Euclidean distance on
verification-tap embeddings.  Distance ties break toward the lower gallery
index, so ranking is deterministic even for degenerate embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ImageDataset, ImageSample, SplitPolicy, make_splits
from .networks import ReidBackbone
from .rng import Rng
from .tensor import Tensor


class DomainLeakageError(RuntimeError):
    """A held-out domain's samples were found in training data."""


@dataclass
class CmcCurve:
    """ranks[k-1] = P(true identity within top-k); non-decreasing in k."""

    ranks: np.ndarray
    probe_count: int

    def rank(self, k: int) -> float:
        return float(self.ranks[k - 1])

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.float64)


@dataclass
class EvalProtocol:
    """Single-shot gallery (one seeded sample per identity), squared
    Euclidean distances, ties broken by ascending gallery index."""

    gallery_camera: int = 0
    probe_camera: int = 1
    seed: int = 0
    max_rank: int = 10

    def split_policy(self) -> SplitPolicy:
        return SplitPolicy(
            gallery_camera=self.gallery_camera, probe_camera=self.probe_camera, seed=self.seed
        )


def extract_embeddings(backbone: ReidBackbone, samples: list[ImageSample], batch_size: int = 64) -> np.ndarray:
    """Verification-tap features, one row per sample, in sample order."""
    if not samples:
        return np.zeros((0, 0))
    rows = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = Tensor(np.stack([s.image for s in chunk]))
        verif, _ = backbone.forward_reid(batch)
        rows.append(verif.values)
    return np.concatenate(rows, axis=0)


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (len(a), len(b))."""
    aa = np.square(a).sum(axis=1)[:, None]
    bb = np.square(b).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def cmc(
    probe_embeddings: np.ndarray,
    probe_ids,
    gallery_embeddings: np.ndarray,
    gallery_ids,
    max_rank: int,
) -> CmcCurve:
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    n_gallery = len(gallery_ids)
    if len(set(gallery_ids.tolist())) != n_gallery:
        raise ValueError("gallery identities must be unique (single-shot)")
    if not set(probe_ids.tolist()) <= set(gallery_ids.tolist()):
        raise ValueError("every probe identity must appear in the gallery")
    if max_rank > n_gallery:
        raise ValueError(f"max_rank {max_rank} exceeds gallery size {n_gallery}")
    dist = squared_distances(probe_embeddings, gallery_embeddings)
    # stable sort: equal distances keep ascending gallery index
    order = np.argsort(dist, axis=1, kind="stable")
    hits = np.zeros(max_rank, dtype=np.float64)
    for p in range(len(probe_ids)):
        ranked_ids = gallery_ids[order[p]]
        position = int(np.nonzero(ranked_ids == probe_ids[p])[0][0])
        if position < max_rank:
            hits[position] += 1.0
    ranks = np.cumsum(hits) / max(len(probe_ids), 1)
    return CmcCurve(ranks=ranks, probe_count=len(probe_ids))


def evaluate_on_split(backbone: ReidBackbone, gallery, probe, max_rank: int = 10) -> CmcCurve:
    gal = extract_embeddings(backbone, gallery)
    prb = extract_embeddings(backbone, probe)
    return cmc(prb, [s.identity for s in probe], gal, [s.identity for s in gallery], max_rank)


def evaluate_dataset(backbone: ReidBackbone, dataset: ImageDataset, protocol: EvalProtocol) -> CmcCurve:
    split = make_splits(dataset, protocol.split_policy())
    max_rank = min(protocol.max_rank, len(split.gallery))
    return evaluate_on_split(backbone, split.gallery, split.probe, max_rank)


def cross_domain_eval(
    backbone: ReidBackbone,
    train_samples: list[ImageSample],
    eval_dataset: ImageDataset,
    heldout_domain: int,
    seed: int = 0,
    max_rank: int = 10,
) -> dict[str, CmcCurve]:
    """Evaluate on a domain absent from training, both camera directions.

    Any training sample (real or synthetic) from the held-out domain is a
    hard error, not a silently optimistic result.
    """
    leaks = [s for s in train_samples if s.domain == heldout_domain]
    if leaks:
        raise DomainLeakageError(
            f"{len(leaks)} training samples belong to held-out domain {heldout_domain}"
        )
    if set(eval_dataset.domains()) != {heldout_domain}:
        raise ValueError(f"evaluation dataset must contain only domain {heldout_domain}")
    out = {}
    for direction, (probe_cam, gallery_cam) in {
        "cam1_to_cam2": (0, 1),
        "cam2_to_cam1": (1, 0),
    }.items():
        rng = Rng(seed).spawn(f"gallery-{direction}")
        real = eval_dataset.real_samples()
        gallery_pool = [s for s in real if s.camera == gallery_cam]
        by_id: dict[int, list[ImageSample]] = {}
        for s in gallery_pool:
            by_id.setdefault(s.identity, []).append(s)
        gallery = [rng.choice(by_id[i]) for i in sorted(by_id)]
        probe = [s for s in real if s.camera == probe_cam and s.identity in by_id]
        out[direction] = evaluate_on_split(backbone, gallery, probe, min(max_rank, len(gallery)))
    return out


# ---------------------------------------------------------------------------
# ablation lattice
# ---------------------------------------------------------------------------

LOSS_VARIANTS = ("triplet", "quartet", "improved_quartet")
GAN_VARIANTS = ("none", "mc_gan", "imgan", "sc_imgan")


@dataclass
class AblationConfig:
    """One cell of the loss-variant x translation-variant lattice.

    mc_gan trains translation without the identity-mapping and semantic
    terms, imgan restores identity mapping, sc_imgan restores both.
    """

    loss_variant: str
    gan_variant: str

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.gan_variant not in GAN_VARIANTS:
            raise ValueError(f"gan_variant must be one of {GAN_VARIANTS}")

    @property
    def label(self) -> str:
        return f"{self.gan_variant}+{self.loss_variant}"


def full_lattice() -> list[AblationConfig]:
    return [AblationConfig(lv, gv) for gv in GAN_VARIANTS for lv in LOSS_VARIANTS]


@dataclass
class AblationCell:
    config: AblationConfig
    seed: int
    rank1: float | None
    rank5: float | None
    rank10: float | None
    error: str | None = None


@dataclass
class AblationReport:
    cells: list[AblationCell] = field(default_factory=list)

    def median_rank1(self, config: AblationConfig) -> float:
        vals = [c.rank1 for c in self.cells if c.config.label == config.label and c.rank1 is not None]
        if not vals:
            raise ValueError(f"no successful cells for {config.label}")
        return float(np.median(vals))

    def rows(self) -> list[tuple]:
        return [
            (c.config.gan_variant, c.config.loss_variant, c.seed, c.rank1, c.rank5, c.rank10, c.error or "")
            for c in self.cells
        ]


def run_ablation(configs: list[AblationConfig], corpus_config, seeds: list[int]) -> AblationReport:
    """Train and evaluate every (config, seed) cell on synthetic data.

    Translation training is shared across loss variants within one
    (gan_variant, seed): the loss variant only affects the backbone.  A cell
    whose training diverges is recorded as an error; the run continues.
    """
    from .pipeline import train_and_evaluate_cell

    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    report = AblationReport()
    for seed in seeds:
        registry_cache: dict[str, object] = {}
        for config in configs:
            try:
                curve = train_and_evaluate_cell(config, corpus_config, seed, registry_cache)
                report.cells.append(
                    AblationCell(
                        config,
                        seed,
                        rank1=curve.rank(1),
                        rank5=curve.rank(5) if len(curve.ranks) >= 5 else None,
                        rank10=curve.rank(10) if len(curve.ranks) >= 10 else None,
                    )
                )
            except FloatingPointError as e:
                report.cells.append(AblationCell(config, seed, None, None, None, error=str(e)))
    return report
