"""Command-line entry points.

    scimgan gen-data    --config F --out F
    scimgan train-gan   --config F --out DIR
    scimgan train-reid  --config F [--gan-ckpt P] --out DIR
    scimgan translate   --ckpt P --input F --src i --dst j|all --out F
    scimgan evaluate    --ckpt P --data F [--protocol single-shot] --out F
    scimgan ablate      --config F --seeds K --out DIR
    scimgan check-grads [--seeds K]

Every run validates its flags before any compute, writes outputs atomically,
and leaves a manifest (config snapshot, seed, input/output hashes) in its
output directory.  Exit code 0 on success, 1 with a diagnostic otherwise.
SCIMGAN_THREADS caps worker parallelism (default: machine cores).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys

import numpy as np

from .checkpoint import (
    CheckpointError,
    load_gan_checkpoint,
    load_reid_backbone,
    save_gan_trainer,
    save_reid_trainer,
)
from .config import ConfigError, TrainConfig, parse_config, serialize_config
from .data import (
    DatasetFormatError,
    ImageDataset,
    ImageSample,
    load_dataset,
    merge_datasets,
    save_dataset,
)
from .evaluation import EvalProtocol, evaluate_dataset, full_lattice, run_ablation
from .gradsuite import TOLERANCE, run_suite
from .orchestrator import loss_history_rows, translate, translate_to_all
from .pipeline import desk_corpus, reid_training_set, split_identities, train_gan, train_reid
from .runio import OutputDirLock, atomic_write_bytes, atomic_write_text, write_manifest
from .tensor import Tensor


class CliError(Exception):
    """User-facing failure with a diagnostic message."""


def _load_config(path) -> TrainConfig:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def _require_file(path, what):
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")


def _csv_bytes(header: list[str], rows: list[tuple]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    corpus = desk_corpus(config)
    merged = merge_datasets(corpus.values())
    save_dataset(merged, args.out)
    print(f"wrote {len(merged)} samples ({config.n_domains} domains) to {args.out}")
    return 0


def cmd_train_gan(args) -> int:
    config = _load_config(args.config)
    with OutputDirLock(args.out):
        corpus = desk_corpus(config)
        trainer = train_gan(config, corpus)
        ckpt = os.path.join(args.out, "gan.ckpt")
        save_gan_trainer(trainer, ckpt)
        losses = os.path.join(args.out, "losses.csv")
        atomic_write_bytes(
            losses,
            _csv_bytes(
                ["epoch", "pair", "d_loss", "g_loss", "cyc", "idm", "sem", "total"],
                loss_history_rows(trainer.history),
            ),
        )
        atomic_write_text(os.path.join(args.out, "config.json"), serialize_config(config))
        write_manifest(args.out, config.to_dict(), config.seed, {"config": args.config},
                       {"gan.ckpt": ckpt, "losses.csv": losses})
    print(f"trained {config.gan_epochs} epochs over {config.n_domains} domains; checkpoint at {ckpt}")
    return 0


def cmd_train_reid(args) -> int:
    config = _load_config(args.config)
    registry = None
    inputs = {"config": args.config}
    if args.gan_ckpt is not None:
        _require_file(args.gan_ckpt, "translation checkpoint")
        registry, gan_config, _ = load_gan_checkpoint(args.gan_ckpt)
        if gan_config.n_domains != config.n_domains:
            raise CliError(
                f"checkpoint has {gan_config.n_domains} domains but config wants {config.n_domains}"
            )
        inputs["gan_ckpt"] = args.gan_ckpt
    with OutputDirLock(args.out):
        corpus = desk_corpus(config)
        train_ids, _ = split_identities(config.n_identities, config.seed)
        train_set = reid_training_set(corpus, train_ids, base_domain=0, registry=registry)
        trainer = train_reid(train_set, config)
        ckpt = os.path.join(args.out, "reid.ckpt")
        save_reid_trainer(trainer, ckpt)
        losses = os.path.join(args.out, "losses.csv")
        atomic_write_bytes(
            losses,
            _csv_bytes(
                ["step", "verif", "ident", "total"],
                [(i, r.verif, r.ident, r.total) for i, r in enumerate(trainer.history)],
            ),
        )
        atomic_write_text(os.path.join(args.out, "config.json"), serialize_config(config))
        write_manifest(args.out, config.to_dict(), config.seed, inputs,
                       {"reid.ckpt": ckpt, "losses.csv": losses})
    print(f"trained {config.reid_steps} steps on {len(train_set)} samples; checkpoint at {ckpt}")
    return 0


def cmd_translate(args) -> int:
    _require_file(args.ckpt, "translation checkpoint")
    _require_file(args.input, "input dataset")
    registry, _, _ = load_gan_checkpoint(args.ckpt)
    dataset = load_dataset(args.input)
    src = args.src
    if src not in registry.domains():
        raise CliError(f"source domain {src} not in checkpoint domains {registry.domains()}")
    sources = [s for s in dataset.samples if s.domain == src]
    if not sources:
        raise CliError(f"input dataset has no samples from domain {src}")
    if args.dst == "all":
        targets = [d for d in registry.domains() if d != src]
    else:
        try:
            targets = [int(args.dst)]
        except ValueError:
            raise CliError(f"--dst must be a domain id or 'all', got {args.dst!r}") from None
        if targets[0] == src or targets[0] not in registry.domains():
            raise CliError(f"destination domain {targets[0]} invalid for source {src}")
    out_samples = []
    for s in sources:
        if len(targets) > 1:
            translated = translate_to_all(Tensor(s.image[None]), src, registry)
        else:
            translated = {targets[0]: translate(Tensor(s.image[None]), src, targets[0], registry)}
        for dst in targets:
            out_samples.append(
                ImageSample(
                    image=translated[dst].values[0],
                    identity=s.identity,
                    domain=dst,
                    camera=s.camera,
                    is_synthetic=True,
                )
            )
    save_dataset(ImageDataset(out_samples, dataset.image_shape), args.out)
    print(f"translated {len(sources)} samples into {len(targets)} domain(s): {len(out_samples)} outputs")
    return 0


def cmd_evaluate(args) -> int:
    _require_file(args.ckpt, "re-id checkpoint")
    _require_file(args.data, "evaluation dataset")
    if args.protocol != "single-shot":
        raise CliError(f"unknown protocol {args.protocol!r} (only single-shot is defined)")
    backbone, config, _ = load_reid_backbone(args.ckpt)
    dataset = load_dataset(args.data)
    results = {}
    for domain in dataset.domains():
        per_domain = ImageDataset(
            [s for s in dataset.samples if s.domain == domain], dataset.image_shape
        )
        curve = evaluate_dataset(backbone, per_domain, EvalProtocol(seed=config.seed))
        results[str(domain)] = {
            "ranks": curve.ranks.tolist(),
            "probe_count": curve.probe_count,
        }
    report = {"protocol": args.protocol, "seed": config.seed, "domains": results}
    atomic_write_text(args.out, json.dumps(report, sort_keys=True, indent=2) + "\n")
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    rows = []
    for domain, r in sorted(results.items()):
        ranks = r["ranks"]
        rows.append(
            (domain, config.seed, ranks[0],
             ranks[4] if len(ranks) > 4 else "", ranks[9] if len(ranks) > 9 else "")
        )
    atomic_write_bytes(csv_path, _csv_bytes(["domain", "seed", "rank1", "rank5", "rank10"], rows))
    print(f"evaluated {len(results)} domain(s); report at {args.out}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    if args.seeds < 3:
        raise CliError("ablation needs at least 3 seeds")
    with OutputDirLock(args.out):
        report = run_ablation(full_lattice(), config, list(range(args.seeds)))
        csv_path = os.path.join(args.out, "ablation.csv")
        atomic_write_bytes(
            csv_path,
            _csv_bytes(["gan_variant", "loss_variant", "seed", "rank1", "rank5", "rank10", "error"],
                       report.rows()),
        )
        json_path = os.path.join(args.out, "ablation.json")
        atomic_write_text(
            json_path,
            json.dumps(
                [
                    {
                        "gan_variant": c.config.gan_variant,
                        "loss_variant": c.config.loss_variant,
                        "seed": c.seed,
                        "rank1": c.rank1,
                        "rank5": c.rank5,
                        "rank10": c.rank10,
                        "error": c.error,
                    }
                    for c in report.cells
                ],
                sort_keys=True,
                indent=2,
            )
            + "\n",
        )
        atomic_write_text(os.path.join(args.out, "config.json"), serialize_config(config))
        write_manifest(args.out, config.to_dict(), config.seed, {"config": args.config},
                       {"ablation.csv": csv_path, "ablation.json": json_path})
    print(f"ablation over {args.seeds} seeds written to {args.out}")
    return 0


def cmd_check_grads(args) -> int:
    results = run_suite(seeds=range(args.seeds))
    width = max(len(name) for name, _ in results)
    failed = []
    for name, err in results:
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{status:4s} {name:{width}s} max_rel_err={err:.3e}")
        if err > TOLERANCE:
            failed.append(name)
    if failed:
        print(f"{len(failed)} check(s) exceeded tolerance {TOLERANCE}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks within tolerance {TOLERANCE} over {args.seeds} seeds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scimgan", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic multi-domain corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-gan", help="train the multi-domain translation networks")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("train-reid", help="train the re-identification backbone")
    p.add_argument("--config", required=True)
    p.add_argument("--gan-ckpt", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_reid)

    p = sub.add_parser("translate", help="translate dataset images between domains")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--src", type=int, required=True)
    p.add_argument("--dst", required=True, help="target domain id or 'all'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="rank-k identification accuracy on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", default="single-shot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the loss-variant x translation-variant lattice")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("check-grads", help="finite-difference check of every loss and layer")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_check_grads)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, DatasetFormatError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
