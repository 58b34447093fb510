"""End-to-end experiment plumbing shared by the CLI, the ablation runner,
and the acceptance suite.

The desk-scale experiment design mirrors the reference protocol: the
re-identification network trains on ONE base domain's real images of the
training identities, optionally extended with their translations into the
other domains; evaluation retrieves held-out identities across all domains
(gallery drawn single-shot from the base domain, probes from every domain's
other camera).  Style-translated positives therefore matter exactly insofar
as they carry identity across the style gap.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import ImageDataset, augment_with_translations, generate_corpus, merge_datasets
from .evaluation import AblationConfig, CmcCurve, EvalProtocol, cross_domain_eval, evaluate_on_split
from .networks import build_reid_backbone
from .orchestrator import DomainRegistry, GanTrainer, build_registry
from .reid import ReidTrainer
from .rng import Rng

GAN_VARIANT_WEIGHTS = {
    "mc_gan": dict(lambda_id=0.0, lambda_sem=0.0),
    "imgan": dict(lambda_sem=0.0),
    "sc_imgan": dict(),
}


def config_for_gan_variant(config: TrainConfig, gan_variant: str) -> TrainConfig:
    """Zero out the loss terms the variant ablates; otherwise unchanged."""
    if gan_variant == "none":
        raise ValueError("gan_variant 'none' trains no translation network")
    return dataclasses.replace(config, **GAN_VARIANT_WEIGHTS[gan_variant]).validate()


def desk_corpus(config: TrainConfig) -> dict[int, ImageDataset]:
    h, w, _ = config.network_profile().image_size
    return generate_corpus(
        config.n_identities,
        config.n_domains,
        config.images_per_id,
        config.seed,
        image_hw=(h, w),
        n_cameras=config.n_cameras,
    )


def train_gan(config: TrainConfig, corpus: dict[int, ImageDataset]) -> GanTrainer:
    """Train the translation registry on the given per-domain datasets."""
    profile = config.network_profile()
    registry = build_registry(profile, len(corpus), Rng(config.seed).spawn("registry"))
    datasets = {d: ds.samples for d, ds in corpus.items()}
    trainer = GanTrainer(registry, datasets, config)
    trainer.run()
    return trainer


def split_identities(n_identities: int, seed: int, train_fraction: float = 0.6) -> tuple[list[int], list[int]]:
    ids = list(range(n_identities))
    Rng(seed).spawn("identity-split").shuffle(ids)
    cut = max(2, int(round(train_fraction * n_identities)))
    train_ids, eval_ids = sorted(ids[:cut]), sorted(ids[cut:])
    if len(eval_ids) < 2:
        raise ValueError("too few identities for evaluation")
    return train_ids, eval_ids


def reid_training_set(
    corpus: dict[int, ImageDataset],
    train_ids: list[int],
    base_domain: int,
    registry: DomainRegistry | None,
) -> ImageDataset:
    """Base-domain real images of the training identities, plus (with a
    registry) their translations into every other registry domain."""
    base = corpus[base_domain]
    keep = set(train_ids)
    real = [s for s in base.real_samples() if s.identity in keep]
    ds = ImageDataset(real, base.image_shape)
    if registry is None:
        return ds
    return augment_with_translations(ds, registry)


def train_reid(
    train_set: ImageDataset,
    config: TrainConfig,
    verification_loss: str = "improved_quartet",
) -> ReidTrainer:
    profile = config.network_profile()
    n_ids = len({s.identity for s in train_set.samples})
    backbone = build_reid_backbone(profile, n_ids, Rng(config.seed).spawn("reid-backbone"))
    trainer = ReidTrainer(backbone, train_set, config, verification_loss=verification_loss)
    trainer.run_steps(config.reid_steps)
    return trainer


def cross_style_eval(
    backbone,
    corpus: dict[int, ImageDataset],
    eval_ids: list[int],
    base_domain: int,
    protocol: EvalProtocol,
) -> CmcCurve:
    """Gallery: single-shot from the base domain; probes: every domain's
    other camera, evaluation identities only."""
    keep = set(eval_ids)
    base_real = [s for s in corpus[base_domain].real_samples() if s.identity in keep]
    rng = Rng(protocol.seed).spawn("gallery")
    by_id: dict[int, list] = {}
    for s in base_real:
        if s.camera == protocol.gallery_camera:
            by_id.setdefault(s.identity, []).append(s)
    gallery = [rng.choice(by_id[i]) for i in sorted(by_id)]
    probe = []
    for ds in corpus.values():
        probe.extend(
            s
            for s in ds.real_samples()
            if s.identity in keep and s.camera == protocol.probe_camera
        )
    return evaluate_on_split(backbone, gallery, probe, min(protocol.max_rank, len(gallery)))


def train_and_evaluate_cell(
    cell: AblationConfig,
    corpus_config: TrainConfig,
    seed: int,
    registry_cache: dict | None = None,
    base_domain: int = 0,
) -> CmcCurve:
    """One ablation cell: (loss variant, translation variant) at one seed.

    The trained registry is cached per gan_variant so the three loss variants
    of a row reuse it (the loss variant only affects the backbone).
    """
    config = dataclasses.replace(corpus_config, seed=seed).validate()
    corpus = desk_corpus(config)
    train_ids, eval_ids = split_identities(config.n_identities, seed)
    registry = None
    if cell.gan_variant != "none":
        cache_key = cell.gan_variant
        if registry_cache is not None and cache_key in registry_cache:
            registry = registry_cache[cache_key]
        else:
            registry = train_gan(config_for_gan_variant(config, cell.gan_variant), corpus).registry
            if registry_cache is not None:
                registry_cache[cache_key] = registry
    train_set = reid_training_set(corpus, train_ids, base_domain, registry)
    reid = train_reid(train_set, config, verification_loss=cell.loss_variant)
    return cross_style_eval(
        reid.backbone, corpus, eval_ids, base_domain, EvalProtocol(seed=seed)
    )


@dataclass
class CrossDomainResult:
    curves: dict[str, CmcCurve]

    def rank1(self) -> float:
        return float(np.mean([c.rank(1) for c in self.curves.values()]))


def cross_domain_experiment(
    corpus_config: TrainConfig,
    seed: int,
    augmented: bool,
    registry_cache: dict | None = None,
    base_domain: int = 0,
) -> CrossDomainResult:
    """Train on the base domain (plus, when augmented, its translations into
    the other non-held-out domains); evaluate on the held-out last domain.

    The translation registry is also trained without the held-out domain, so
    no held-out pixels influence training in any way.  Returns both camera
    directions, evaluated on identities unseen during training.
    """
    config = dataclasses.replace(corpus_config, seed=seed).validate()
    if config.n_domains < 3:
        raise ValueError("cross-domain experiment needs at least 3 domains")
    corpus = desk_corpus(config)
    heldout = config.n_domains - 1
    train_corpus = {d: ds for d, ds in corpus.items() if d != heldout}
    train_ids, eval_ids = split_identities(config.n_identities, seed)
    registry = None
    if augmented:
        if registry_cache is not None and "registry" in registry_cache:
            registry = registry_cache["registry"]
        else:
            registry = train_gan(config, train_corpus).registry
            if registry_cache is not None:
                registry_cache["registry"] = registry
    train_set = reid_training_set(corpus, train_ids, base_domain, registry)
    reid = train_reid(train_set, config)
    eval_ds = ImageDataset(
        [s for s in corpus[heldout].real_samples() if s.identity in set(eval_ids)],
        corpus[heldout].image_shape,
    )
    curves = cross_domain_eval(reid.backbone, train_set.samples, eval_ds, heldout, seed=seed)
    return CrossDomainResult(curves)
