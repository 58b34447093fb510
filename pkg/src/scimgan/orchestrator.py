"""Multi-domain training: one encoder/decoder/discriminator triple per domain,
trained two domains at a time over a round-robin pair schedule.

Because all encoders map into one shared latent space, translating i -> j is
Dec_j(Enc_i(x)): N domains need exactly N generator/discriminator pairs,
versus N*(N-1) directed generator pairs for two-domain cycle training.

Each pair step alternates: discriminators first (on detached fakes), then
both domains' encoder/decoder on the combined objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .gan_losses import (
    LossWeights,
    TranslationBundle,
    cycle_loss,
    identity_mapping_loss,
    mean_l1,
    scimgan_objective,
    semantic_consistency_loss,
)
from .networks import Network, NetworkProfile, build_decoder, build_discriminator, build_encoder
from .optim import Adam, LrSchedule
from .rng import Rng
from .tensor import Tape, Tensor, backward

LOG_EPS = 1e-12


@dataclass
class DomainComponentSet:
    domain_id: int
    encoder: Network
    decoder: Network
    discriminator: Network


class DomainRegistry:
    """Domain id -> component triple, with a shared-latent compatibility check."""

    def __init__(self, components: list[DomainComponentSet], profile: NetworkProfile):
        self.profile = profile
        self._components: dict[int, DomainComponentSet] = {}
        latent = None
        for comp in components:
            if comp.domain_id in self._components:
                raise ValueError(f"duplicate domain id {comp.domain_id}")
            if latent is None:
                latent = comp.encoder.out_shape
            elif comp.encoder.out_shape != latent:
                raise ValueError(
                    f"domain {comp.domain_id} latent {comp.encoder.out_shape} differs from {latent}"
                )
            if comp.decoder.in_shape != latent:
                raise ValueError(f"domain {comp.domain_id} decoder does not consume the shared latent")
            self._components[comp.domain_id] = comp

    def domains(self) -> list[int]:
        return sorted(self._components)

    def __getitem__(self, domain_id: int) -> DomainComponentSet:
        try:
            return self._components[domain_id]
        except KeyError:
            raise ValueError(f"unknown domain id {domain_id}") from None

    def __len__(self):
        return len(self._components)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for d in self.domains():
            comp = self._components[d]
            for role in ("encoder", "decoder", "discriminator"):
                for name, p in getattr(comp, role).parameters().items():
                    out[f"d{d}.{role}.{name}"] = p
        return out

    def generator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if ".discriminator." not in k}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if ".discriminator." in k}


def build_registry(profile: NetworkProfile, n_domains: int, rng: Rng) -> DomainRegistry:
    if n_domains < 2:
        raise ValueError("a registry needs at least 2 domains")
    components = []
    for d in range(n_domains):
        components.append(
            DomainComponentSet(
                domain_id=d,
                encoder=build_encoder(profile, rng.spawn(f"domain{d}.encoder")),
                decoder=build_decoder(profile, rng.spawn(f"domain{d}.decoder")),
                discriminator=build_discriminator(profile, rng.spawn(f"domain{d}.discriminator")),
            )
        )
    return DomainRegistry(components, profile)


def pair_count(n_domains: int, method: str) -> int:
    """Generator/discriminator pairs needed to cover all domain mappings."""
    if n_domains < 2:
        raise ValueError("pair counting needs at least 2 domains")
    if method == "scimgan":
        return n_domains
    if method == "cyclegan":
        return n_domains * (n_domains - 1)
    raise ValueError(f"unknown method '{method}'")


def _check_image(x: Tensor, registry: DomainRegistry) -> None:
    expected = registry.profile.image_size
    chw = (expected[2], expected[0], expected[1])
    if len(x.shape) != 4 or x.shape[1:] != chw:
        raise T.ShapeError(f"expected batched image of shape (B,)+{chw}, got {x.shape}")
    if float(np.max(np.abs(x.values))) > 1.0 + 1e-9:
        raise ValueError("image values must lie in [-1, 1]")


def translate(x: Tensor, src: int, dst: int, registry: DomainRegistry) -> Tensor:
    """Dec_dst(Enc_src(x)) over the frozen registry."""
    if src == dst:
        raise ValueError("src and dst must differ (same-domain mapping is a config variant)")
    _check_image(x, registry)
    src_comp, dst_comp = registry[src], registry[dst]
    return dst_comp.decoder.forward(src_comp.encoder.forward(x))


def translate_to_all(x: Tensor, src: int, registry: DomainRegistry) -> dict[int, Tensor]:
    """One translation per other domain; the source is encoded exactly once."""
    if len(registry) < 2:
        raise ValueError("registry must hold at least 2 domains")
    _check_image(x, registry)
    latent = registry[src].encoder.forward(x)
    return {
        dst: registry[dst].decoder.forward(latent)
        for dst in registry.domains()
        if dst != src
    }


@dataclass
class PairLossReport:
    """Scalar loss components for one pair step (or an epoch-mean of steps)."""

    d_loss: float
    g_loss: float
    cyc: float
    idm: float
    sem: float
    total: float

    @staticmethod
    def mean(reports: list["PairLossReport"]) -> "PairLossReport":
        arr = np.array([[r.d_loss, r.g_loss, r.cyc, r.idm, r.sem, r.total] for r in reports])
        return PairLossReport(*arr.mean(axis=0))


class PairSchedule:
    """Round-robin over all unordered domain pairs, once each per cycle."""

    def __init__(self, domains: list[int], shuffle_seed: int | None = None):
        self.domains = sorted(domains)
        if len(self.domains) < 2:
            raise ValueError("schedule needs at least 2 domains")
        self.base = [
            (a, b) for i, a in enumerate(self.domains) for b in self.domains[i + 1 :]
        ]
        self.shuffle_seed = shuffle_seed

    def pairs_for_epoch(self, epoch: int) -> list[tuple[int, int]]:
        pairs = list(self.base)
        if self.shuffle_seed is not None:
            Rng(self.shuffle_seed).spawn("pair-order", epoch).shuffle(pairs)
        return pairs


def _mean_log(d_out: Tensor) -> Tensor:
    return T.mean(T.log(T.clip(d_out, LOG_EPS, 1.0 - LOG_EPS)))


def _make_bundle(registry, src: int, dst: int, x_src: Tensor) -> TranslationBundle:
    z_src = registry[src].encoder.forward(x_src)
    x_fake = registry[dst].decoder.forward(z_src)
    z_back = registry[dst].encoder.forward(x_fake)
    x_rec = registry[src].decoder.forward(z_back)
    return TranslationBundle(x_src, z_src, x_fake, z_back, x_rec, src, dst)


def train_pair_step(
    registry: DomainRegistry,
    i: int,
    j: int,
    batch_i: Tensor,
    batch_j: Tensor,
    weights: LossWeights,
    gen_opt: Adam,
    disc_opt: Adam,
    identity_variant: str = "literal",
    generator_form: str = "non_saturating",
) -> PairLossReport:
    """One alternating update for the (i, j) mapping; returns all components."""
    comp_i, comp_j = registry[i], registry[j]

    # discriminator phase: fakes computed off-tape are detached by construction
    fake_j = comp_j.decoder.forward(comp_i.encoder.forward(batch_i))
    fake_i = comp_i.decoder.forward(comp_j.encoder.forward(batch_j))
    with Tape() as tape:
        d_loss_j = T.mul(
            T.add(_mean_log(comp_j.discriminator.forward(batch_j)),
                  _mean_log(T.sub(1.0, comp_j.discriminator.forward(fake_j)))),
            -1.0,
        )
        d_loss_i = T.mul(
            T.add(_mean_log(comp_i.discriminator.forward(batch_i)),
                  _mean_log(T.sub(1.0, comp_i.discriminator.forward(fake_i)))),
            -1.0,
        )
        d_total = T.add(d_loss_i, d_loss_j)
    disc_opt.zero_grad()
    gen_opt.zero_grad()
    backward(tape, d_total)
    disc_opt.step()

    # generator phase: full cycles both directions on a fresh tape
    with Tape() as tape:
        fwd = _make_bundle(registry, i, j, batch_i)
        bwd_bundle = _make_bundle(registry, j, i, batch_j)
        if generator_form == "non_saturating":
            adv_fwd = T.mul(_mean_log(comp_j.discriminator.forward(fwd.x_fake)), -1.0)
            adv_bwd = T.mul(_mean_log(comp_i.discriminator.forward(bwd_bundle.x_fake)), -1.0)
        elif generator_form == "saturating":
            adv_fwd = _mean_log(T.sub(1.0, comp_j.discriminator.forward(fwd.x_fake)))
            adv_bwd = _mean_log(T.sub(1.0, comp_i.discriminator.forward(bwd_bundle.x_fake)))
        else:
            raise ValueError(f"unknown generator_form '{generator_form}'")
        cyc = cycle_loss(fwd, bwd_bundle)
        if identity_variant == "literal":
            idm = identity_mapping_loss(fwd.x_src, fwd.x_fake, bwd_bundle.x_src, bwd_bundle.x_fake)
        elif identity_variant == "same_domain":
            own_i = comp_i.decoder.forward(comp_i.encoder.forward(batch_i))
            own_j = comp_j.decoder.forward(comp_j.encoder.forward(batch_j))
            idm = T.add(mean_l1(own_i, batch_i), mean_l1(own_j, batch_j))
        else:
            raise ValueError(f"unknown identity_variant '{identity_variant}'")
        sem = semantic_consistency_loss(fwd.z_src, fwd.z_back, bwd_bundle.z_src, bwd_bundle.z_back)
        total = scimgan_objective(adv_fwd, adv_bwd, cyc, idm, sem, weights)
    gen_opt.zero_grad()
    disc_opt.zero_grad()
    backward(tape, total)
    gen_opt.step()

    return PairLossReport(
        d_loss=d_total.item(),
        g_loss=adv_fwd.item() + adv_bwd.item(),
        cyc=cyc.item(),
        idm=idm.item(),
        sem=sem.item(),
        total=total.item(),
    )


class GanTrainer:
    """Epoch/pair/batch loop with resumable position and loss history.

    Batch order for (epoch, pair, domain) is derived from the seed, so a
    resumed run sees exactly the same batches as an uninterrupted one.
    """

    def __init__(self, registry: DomainRegistry, datasets: dict[int, list], config: TrainConfig):
        for d in registry.domains():
            if d not in datasets or len(datasets[d]) == 0:
                raise ValueError(f"empty or missing dataset for domain {d}")
        self.registry = registry
        self.datasets = datasets
        self.config = config
        self.weights = LossWeights(config.lambda_cyc, config.lambda_id, config.lambda_sem)
        self.schedule = LrSchedule(config.lr_gan, config.gan_decay_start, config.gan_epochs - config.gan_decay_start) \
            if config.gan_decay_start < config.gan_epochs else LrSchedule(config.lr_gan, config.gan_epochs, 1)
        self.pair_schedule = PairSchedule(
            registry.domains(), shuffle_seed=config.seed if config.shuffle_pairs else None
        )
        self.gen_opt = Adam(
            registry.generator_parameters(), config.lr_gan, config.adam_beta1, config.adam_beta2
        )
        self.disc_opt = Adam(
            registry.discriminator_parameters(), config.lr_gan, config.adam_beta1, config.adam_beta2
        )
        self.epoch = 0
        self.step_in_epoch = 0
        self.history: list[dict[tuple[int, int], PairLossReport]] = []
        self._epoch_reports: dict[tuple[int, int], list[PairLossReport]] = {}
        self._batch_cache: dict[tuple[int, tuple[int, int]], list] = {}

    def _batches_for(self, epoch: int, pair: tuple[int, int]) -> list[tuple[Tensor, Tensor]]:
        key = (epoch, pair)
        cached = self._batch_cache.get(key)
        if cached is not None:
            return cached
        batches = self._build_batches(epoch, pair)
        self._batch_cache = {key: batches}  # keep only the current pair
        return batches

    def _build_batches(self, epoch: int, pair: tuple[int, int]) -> list[tuple[Tensor, Tensor]]:
        i, j = pair
        ds_i, ds_j = self.datasets[i], self.datasets[j]
        order_i = list(range(len(ds_i)))
        order_j = list(range(len(ds_j)))
        Rng(self.config.seed).spawn(f"batch-order-e{epoch}-p{i}-{j}-a").shuffle(order_i)
        Rng(self.config.seed).spawn(f"batch-order-e{epoch}-p{i}-{j}-b").shuffle(order_j)
        n = min(len(order_i), len(order_j))
        bs = min(self.config.gan_batch, n)
        batches = []
        for start in range(0, n - bs + 1, bs):
            xi = np.stack([ds_i[k].image for k in order_i[start : start + bs]])
            xj = np.stack([ds_j[k].image for k in order_j[start : start + bs]])
            batches.append((Tensor(xi), Tensor(xj)))
        return batches

    def steps_per_epoch(self) -> int:
        total = 0
        for pair in self.pair_schedule.pairs_for_epoch(self.epoch):
            i, j = pair
            n = min(len(self.datasets[i]), len(self.datasets[j]))
            bs = min(self.config.gan_batch, n)
            total += (n - bs) // bs + 1
        return total

    def _position(self) -> tuple[tuple[int, int], int]:
        """Map step_in_epoch to (pair, batch index)."""
        remaining = self.step_in_epoch
        for pair in self.pair_schedule.pairs_for_epoch(self.epoch):
            i, j = pair
            n = min(len(self.datasets[i]), len(self.datasets[j]))
            bs = min(self.config.gan_batch, n)
            count = (n - bs) // bs + 1
            if remaining < count:
                return pair, remaining
            remaining -= count
        raise RuntimeError("step_in_epoch past the end of the epoch")

    def run_steps(self, n_steps: int) -> None:
        for _ in range(n_steps):
            if self.epoch >= self.config.gan_epochs:
                return
            lr = self.schedule.lr(self.epoch)
            self.gen_opt.lr = lr
            self.disc_opt.lr = lr
            pair, batch_idx = self._position()
            batch_i, batch_j = self._batches_for(self.epoch, pair)[batch_idx]
            report = train_pair_step(
                self.registry,
                pair[0],
                pair[1],
                batch_i,
                batch_j,
                self.weights,
                self.gen_opt,
                self.disc_opt,
                identity_variant=self.config.identity_variant,
                generator_form=self.config.adversarial_form,
            )
            self._epoch_reports.setdefault(pair, []).append(report)
            self.step_in_epoch += 1
            if self.step_in_epoch >= self.steps_per_epoch():
                self.history.append(
                    {pair: PairLossReport.mean(reports) for pair, reports in self._epoch_reports.items()}
                )
                self._epoch_reports = {}
                self.step_in_epoch = 0
                self.epoch += 1

    def run(self) -> list[dict[tuple[int, int], PairLossReport]]:
        while self.epoch < self.config.gan_epochs:
            self.run_steps(self.steps_per_epoch() - self.step_in_epoch)
        return self.history

    def epoch_mean(self, epoch: int) -> PairLossReport:
        return PairLossReport.mean(list(self.history[epoch].values()))


def train_all(registry: DomainRegistry, datasets: dict[int, list], config: TrainConfig):
    """Train every pair mapping for config.gan_epochs; returns (registry, history)."""
    trainer = GanTrainer(registry, datasets, config)
    history = trainer.run()
    return registry, history


def loss_history_rows(history) -> list[tuple]:
    """Flatten history to (epoch, pair, d_loss, g_loss, cyc, idm, sem, total) rows."""
    rows = []
    for epoch, per_pair in enumerate(history):
        for pair in sorted(per_pair):
            r = per_pair[pair]
            rows.append(
                (epoch, f"{pair[0]}-{pair[1]}", r.d_loss, r.g_loss, r.cyc, r.idm, r.sem, r.total)
            )
    return rows
