"""Versioned binary checkpoints.

Layout:
  magic "SCIM" | format version u32 LE | header length u32 LE
  | header (UTF-8 JSON) | payload (float32 LE arrays, manifest order)

The header carries the config snapshot, a manifest of (name, shape, byte
offset, crc32) per tensor, rng states, the epoch/step counters, and the
weight-init stddev.  Arrays are stored float32: that is the declared
precision boundary, so parameters and optimizer moments restore to exactly
the stored float32 values and training continues from there.  Saving is
deterministic (sorted manifest, no timestamps): same state, same bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib

import numpy as np

from .config import TrainConfig
from .data import ImageDataset
from .layers import INIT_STDDEV
from .networks import build_reid_backbone
from .orchestrator import GanTrainer, build_registry
from .reid import ReidTrainer
from .rng import Rng
from .runio import atomic_write_bytes

CKPT_MAGIC = b"SCIM"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = []
    payload = bytearray()
    for name in sorted(arrays):
        blob = np.asarray(arrays[name], dtype="<f4").tobytes(order="C")
        manifest.append(
            {
                "name": name,
                "shape": list(np.asarray(arrays[name]).shape),
                "offset": len(payload),
                "crc32": zlib.crc32(blob),
            }
        )
        payload.extend(blob)
    header = dict(meta)
    header["manifest"] = manifest
    header["payload_length"] = len(payload)
    header["init_stddev"] = INIT_STDDEV
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(header_bytes)), header_bytes, payload]
    )
    atomic_write_bytes(path, blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (float32 arrays by name, header metadata)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CKPT_VERSION})")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    payload = blob[12 + header_len :]
    if len(payload) != header.get("payload_length", -1):
        raise CheckpointError(
            f"payload length {len(payload)} does not match header {header.get('payload_length')}"
        )
    arrays = {}
    for entry in header["manifest"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        raw = payload[offset : offset + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"payload truncated inside tensor '{name}'")
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"checksum mismatch in tensor '{name}'")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return arrays, header


def _quantize_into(params: dict, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Assign float32-stored arrays back into float64 tensors/ndarrays."""
    for name, target in params.items():
        key = prefix + name
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing tensor '{key}'")
        stored = np.asarray(arrays[key], dtype=np.float64)
        if stored.shape != tuple(target.shape):
            raise CheckpointError(f"tensor '{key}' has shape {stored.shape}, expected {tuple(target.shape)}")
        if hasattr(target, "values"):
            target.values = stored.copy()
        else:
            params[name] = stored.copy()


# ---------------------------------------------------------------------------
# translation-training state
# ---------------------------------------------------------------------------


def save_gan_trainer(trainer: GanTrainer, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in trainer.registry.parameters().items():
        arrays[f"param.{name}"] = p.values
    gen_arrays, gen_meta = trainer.gen_opt.state()
    disc_arrays, disc_meta = trainer.disc_opt.state()
    arrays.update({f"opt.gen.{k}": v for k, v in gen_arrays.items()})
    arrays.update({f"opt.disc.{k}": v for k, v in disc_arrays.items()})
    meta = {
        "kind": "gan",
        "config": trainer.config.to_dict(),
        "epoch": trainer.epoch,
        "step_in_epoch": trainer.step_in_epoch,
        "n_domains": len(trainer.registry),
        "opt_gen": gen_meta,
        "opt_disc": disc_meta,
        "rng_states": {},
    }
    save_checkpoint(path, arrays, meta)


def load_gan_checkpoint(path):
    """Rebuild the frozen registry (for translate/evaluate); returns
    (registry, config, header)."""
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "gan":
        raise CheckpointError(f"expected a translation checkpoint, got kind={header.get('kind')!r}")
    config = TrainConfig(**header["config"]).validate()
    registry = build_registry(config.network_profile(), header["n_domains"], Rng(config.seed).spawn("registry"))
    _quantize_into(registry.parameters(), arrays, prefix="param.")
    return registry, config, header


def resume_gan_trainer(path, datasets: dict[int, list]) -> GanTrainer:
    """Reconstruct a trainer mid-run; training continues bit-identically
    (at float32 precision) given the same datasets."""
    registry, config, header = load_gan_checkpoint(path)
    arrays, _ = load_checkpoint(path)
    trainer = GanTrainer(registry, datasets, config)
    trainer.epoch = int(header["epoch"])
    trainer.step_in_epoch = int(header["step_in_epoch"])
    gen_arrays = {k[len("opt.gen.") :]: v for k, v in arrays.items() if k.startswith("opt.gen.")}
    disc_arrays = {k[len("opt.disc.") :]: v for k, v in arrays.items() if k.startswith("opt.disc.")}
    trainer.gen_opt.load_state(
        {k: np.asarray(v, dtype=np.float64) for k, v in gen_arrays.items()}, header["opt_gen"]
    )
    trainer.disc_opt.load_state(
        {k: np.asarray(v, dtype=np.float64) for k, v in disc_arrays.items()}, header["opt_disc"]
    )
    return trainer


# ---------------------------------------------------------------------------
# re-identification training state
# ---------------------------------------------------------------------------


def save_reid_trainer(trainer: ReidTrainer, path) -> None:
    arrays = {f"param.{k}": p.values for k, p in trainer.backbone.parameters().items()}
    opt_arrays, opt_meta = trainer.optimizer.state()
    arrays.update({f"opt.{k}": v for k, v in opt_arrays.items()})
    meta = {
        "kind": "reid",
        "config": trainer.config.to_dict(),
        "verification_loss": trainer.verification_loss,
        "step": trainer.step,
        "n_identities": trainer.backbone.n_identities,
        "class_index": {str(k): v for k, v in trainer.class_index.items()},
        "opt": opt_meta,
        "rng_states": {"sampler": list(trainer.rng.state())},
    }
    save_checkpoint(path, arrays, meta)


def load_reid_backbone(path):
    """Rebuild the frozen backbone (for evaluation); returns
    (backbone, config, header)."""
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "reid":
        raise CheckpointError(f"expected a re-id checkpoint, got kind={header.get('kind')!r}")
    config = TrainConfig(**header["config"]).validate()
    backbone = build_reid_backbone(
        config.network_profile(), int(header["n_identities"]), Rng(config.seed).spawn("reid-backbone")
    )
    _quantize_into(backbone.parameters(), arrays, prefix="param.")
    return backbone, config, header


def resume_reid_trainer(path, train_dataset: ImageDataset) -> ReidTrainer:
    backbone, config, header = load_reid_backbone(path)
    arrays, _ = load_checkpoint(path)
    trainer = ReidTrainer(
        backbone, train_dataset, config, verification_loss=header["verification_loss"]
    )
    stored_index = {int(k): v for k, v in header["class_index"].items()}
    if stored_index != trainer.class_index:
        raise CheckpointError("training dataset identities do not match the checkpoint")
    trainer.step = int(header["step"])
    trainer.rng = Rng.from_state(tuple(header["rng_states"]["sampler"]))
    opt_arrays = {k[len("opt.") :]: np.asarray(v, np.float64) for k, v in arrays.items() if k.startswith("opt.")}
    trainer.optimizer.load_state(opt_arrays, header["opt"])
    return trainer
