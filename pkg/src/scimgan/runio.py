"""Run output hygiene: atomic writes, directory locks, manifests, hashing."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write via a sibling temp file + rename; never leaves partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def worker_count() -> int:
    """Worker-parallelism cap: SCIMGAN_THREADS, default machine cores."""
    value = os.environ.get("SCIMGAN_THREADS", "").strip()
    if value:
        try:
            n = int(value)
        except ValueError as e:
            raise ValueError(f"SCIMGAN_THREADS must be an integer, got {value!r}") from e
        if n < 1:
            raise ValueError("SCIMGAN_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


class OutputDirLock:
    """One writer per output directory, enforced with an O_EXCL lock file."""

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        self.lock_path = os.path.join(self.directory, ".lock")
        self._fd = None

    def __enter__(self):
        os.makedirs(self.directory, exist_ok=True)
        try:
            self._fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory {self.directory} is locked by another run "
                f"(remove {self.lock_path} if that run is dead)"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self.lock_path)


def write_manifest(directory, config_dict: dict, seed: int, inputs: dict, outputs: dict) -> str:
    """Record everything needed to reproduce a run: config, seed, file hashes."""
    manifest = {
        "config": config_dict,
        "seed": seed,
        "inputs": {name: sha256_file(p) for name, p in inputs.items()},
        "outputs": {name: sha256_file(p) for name, p in outputs.items()},
    }
    path = os.path.join(os.fspath(directory), "manifest.json")
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
