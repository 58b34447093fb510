"""Procedural multi-domain, multi-identity image corpus with exact labels.

Identities are small arrangements of 2-4 colored geometric primitives;
domains are photometric/background regimes (brightness shift, per-channel
gain, background texture, pixel noise).  Cameras add a deterministic
viewpoint offset plus per-render pose jitter, so gallery and probe sets drawn
from different cameras are never byte-equal.

Everything is a pure function of seeds.  Per-sample rng streams are derived
from (corpus seed, sample index), so rendering could run in parallel and
still produce byte-identical corpora.  ``noise_sigma`` scales all per-render
randomness (pixel noise and pose jitter); at 0 a render is an exact function
of (template, style, camera).

Datasets serialize to a portable binary format:
  magic "SCTD" | version u32 LE | header length u32 LE
  | header JSON (record_count, image_shape, fields)
  | records: identity u32 LE, domain u16 LE, camera u16 LE,
             is_synthetic u8, pixels float32 LE row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

FORMAT_MAGIC = b"SCTD"
FORMAT_VERSION = 1

POSE_JITTER_PER_SIGMA = 8.0  # pixels of pose jitter std per unit noise_sigma
_CAMERA_OFFSETS = [(-0.6, -0.4), (0.6, 0.4), (0.0, 0.9), (-0.9, 0.5)]


class DatasetFormatError(ValueError):
    """Malformed or truncated dataset file."""


@dataclass
class ImageSample:
    """One labeled image; pixels are (C,H,W) float64 in [-1, 1]."""

    image: np.ndarray
    identity: int
    domain: int
    camera: int
    is_synthetic: bool = False


@dataclass
class DomainStyle:
    brightness_shift: float
    channel_gain: tuple[float, float, float]
    background_texture_seed: int
    noise_sigma: float


@dataclass
class Primitive:
    kind: str  # disk | rect
    cx: float  # center, fraction of width
    cy: float
    size: float  # radius / half-side, fraction of image size
    color: tuple[float, float, float]


@dataclass
class IdentityTemplate:
    identity: int
    primitives: list[Primitive]


@dataclass
class ImageDataset:
    samples: list[ImageSample]
    image_shape: tuple[int, int, int]  # (C, H, W)

    def __len__(self):
        return len(self.samples)

    def identities(self) -> list[int]:
        return sorted({s.identity for s in self.samples})

    def domains(self) -> list[int]:
        return sorted({s.domain for s in self.samples})

    def real_samples(self) -> list[ImageSample]:
        return [s for s in self.samples if not s.is_synthetic]

    def by_identity(self) -> dict[int, list[ImageSample]]:
        out: dict[int, list[ImageSample]] = {}
        for s in self.samples:
            out.setdefault(s.identity, []).append(s)
        return out


def merge_datasets(datasets) -> ImageDataset:
    datasets = list(datasets)
    shape = datasets[0].image_shape
    samples = []
    for ds in datasets:
        if ds.image_shape != shape:
            raise ValueError("cannot merge datasets with different image shapes")
        samples.extend(ds.samples)
    return ImageDataset(samples, shape)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _background(style: DomainStyle, h: int, w: int) -> np.ndarray:
    rng = Rng(style.background_texture_seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / max(h, w)
    img = np.empty((3, h, w))
    for c in range(3):
        base = rng.uniform(-0.2, 0.2)
        amp = rng.uniform(0.05, 0.15)
        fx = rng.uniform(2.0, 7.0)
        fy = rng.uniform(2.0, 7.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img[c] = base + amp * np.sin(fx * xx + fy * yy + phase)
    return img


def _paint(img: np.ndarray, prim: Primitive, dx: float, dy: float, scale: float) -> None:
    """Composite one primitive with a soft (sub-pixel friendly) edge."""
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx = prim.cx * w + dx
    cy = prim.cy * h + dy
    size = max(prim.size * max(h, w) * scale, 0.5)
    edge = 0.7
    if prim.kind == "disk":
        r = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        mask = 1.0 / (1.0 + np.exp((r - size) / edge))
    else:
        mx = 1.0 / (1.0 + np.exp((np.abs(xx - cx) - size) / edge))
        my = 1.0 / (1.0 + np.exp((np.abs(yy - cy) - size * 1.3) / edge))
        mask = mx * my
    for c in range(3):
        img[c] = img[c] * (1.0 - mask) + prim.color[c] * mask


def render_sample(
    template: IdentityTemplate,
    style: DomainStyle,
    camera: int,
    rng: Rng,
    image_hw: tuple[int, int] = (16, 16),
) -> ImageSample:
    """Deterministic render given (template, style, camera, rng state)."""
    h, w = image_hw
    img = _background(style, h, w)
    cam_dx, cam_dy = _CAMERA_OFFSETS[camera % len(_CAMERA_OFFSETS)]
    jitter = POSE_JITTER_PER_SIGMA * style.noise_sigma
    for prim in template.primitives:
        dx = cam_dx + jitter * rng.normal()
        dy = cam_dy + jitter * rng.normal()
        scale = 1.0 + 0.5 * style.noise_sigma * rng.normal()
        _paint(img, prim, dx, dy, scale)
    gains = np.asarray(style.channel_gain, dtype=np.float64)[:, None, None]
    noise = style.noise_sigma * rng.normal(size=img.size).reshape(img.shape)
    img = np.clip(img * gains + style.brightness_shift + noise, -1.0, 1.0)
    return ImageSample(image=img, identity=template.identity, domain=-1, camera=camera)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def _template_distance(a: IdentityTemplate, b: IdentityTemplate) -> float:
    if len(a.primitives) != len(b.primitives):
        return float("inf")
    worst = 0.0
    for pa, pb in zip(a.primitives, b.primitives):
        d = abs(pa.cx - pb.cx) + abs(pa.cy - pb.cy) + abs(pa.size - pb.size)
        d += float(np.abs(np.subtract(pa.color, pb.color)).sum())
        d += 0.0 if pa.kind == pb.kind else 1.0
        worst = max(worst, d)
    return worst


def make_identity_templates(n: int, rng: Rng, min_separation: float = 0.35) -> list[IdentityTemplate]:
    templates: list[IdentityTemplate] = []
    for identity in range(n):
        for _ in range(200):
            prims = []
            for _ in range(2 + rng.randint(3)):
                prims.append(
                    Primitive(
                        kind=("disk", "rect")[rng.randint(2)],
                        cx=rng.uniform(0.22, 0.78),
                        cy=rng.uniform(0.22, 0.78),
                        size=rng.uniform(0.10, 0.22),
                        color=tuple(rng.uniform(-0.7, 0.7, size=3)),
                    )
                )
            cand = IdentityTemplate(identity, prims)
            if all(_template_distance(cand, t) >= min_separation for t in templates):
                templates.append(cand)
                break
        else:
            raise RuntimeError(f"could not separate identity {identity}; lower min_separation")
    return templates


def make_domain_styles(n: int, rng: Rng, min_delta: float = 0.05) -> list[DomainStyle]:
    """Styles spread over brightness/gain space, pairwise separated."""
    styles = []
    for d in range(n):
        t = d / max(n - 1, 1)
        brightness = -0.22 + 0.44 * t
        gains = [1.0, 1.0, 1.0]
        gains[d % 3] += 0.18
        gains[(d + 1) % 3] -= 0.10
        styles.append(
            DomainStyle(
                brightness_shift=brightness,
                channel_gain=tuple(gains),
                background_texture_seed=rng.next_u64(),
                noise_sigma=0.05,
            )
        )
    for i in range(n):
        for j in range(i + 1, n):
            a, b = styles[i], styles[j]
            sep = max(
                abs(a.brightness_shift - b.brightness_shift),
                float(np.max(np.abs(np.subtract(a.channel_gain, b.channel_gain)))),
            )
            if sep < min_delta and a.background_texture_seed == b.background_texture_seed:
                raise RuntimeError(f"domains {i} and {j} are not separated")
    return styles


def generate_corpus(
    n_identities: int,
    n_domains: int,
    images_per_id_per_domain: int,
    seed: int,
    image_hw: tuple[int, int] = (16, 16),
    n_cameras: int = 2,
) -> dict[int, ImageDataset]:
    """Render every identity in every domain; returns one dataset per domain."""
    if n_identities < 3:
        raise ValueError("need at least 3 identities")
    if n_domains < 2:
        raise ValueError("need at least 2 domains")
    if images_per_id_per_domain < 1:
        raise ValueError("need at least 1 image per identity per domain")
    root = Rng(seed)
    templates = make_identity_templates(n_identities, root.spawn("identities"))
    styles = make_domain_styles(n_domains, root.spawn("styles"))
    shape = (3,) + tuple(image_hw)
    out: dict[int, ImageDataset] = {}
    index = 0
    for domain in range(n_domains):
        samples = []
        for template in templates:
            for k in range(images_per_id_per_domain):
                sample = render_sample(
                    template,
                    styles[domain],
                    camera=k % n_cameras,
                    rng=root.spawn("render", index),
                    image_hw=image_hw,
                )
                sample.domain = domain
                samples.append(sample)
                index += 1
        out[domain] = ImageDataset(samples, shape)
    return out


# ---------------------------------------------------------------------------
# splits and augmentation
# ---------------------------------------------------------------------------


@dataclass
class SplitPolicy:
    """How to carve train/gallery/probe out of a dataset.

    Single-shot: the gallery holds exactly one seeded-choice sample per
    identity from ``gallery_camera``; probes are all real samples from
    ``probe_camera``.  With ``train_identity_overlap`` False, a fraction of
    identities is held out of training and only they are evaluated.
    """

    gallery_camera: int = 0
    probe_camera: int = 1
    seed: int = 0
    train_identity_overlap: bool = True
    train_fraction: float = 0.6

    @property
    def policy_id(self) -> str:
        mode = "overlap" if self.train_identity_overlap else "disjoint"
        return f"single-shot/cam{self.gallery_camera}-gallery/cam{self.probe_camera}-probe/{mode}/seed{self.seed}"


@dataclass
class DatasetSplit:
    train: list[ImageSample]
    gallery: list[ImageSample]
    probe: list[ImageSample]
    policy_id: str = ""


def single_shot_gallery(samples: list[ImageSample], camera: int, rng: Rng) -> list[ImageSample]:
    """One real sample per identity from the given camera, seeded choice."""
    pool: dict[int, list[ImageSample]] = {}
    for s in samples:
        if not s.is_synthetic and s.camera == camera:
            pool.setdefault(s.identity, []).append(s)
    return [rng.choice(pool[i]) for i in sorted(pool)]


def make_splits(dataset: ImageDataset, policy: SplitPolicy) -> DatasetSplit:
    rng = Rng(policy.seed).spawn("split")
    real = dataset.real_samples()
    identities = sorted({s.identity for s in real})
    if policy.train_identity_overlap:
        train_ids, eval_ids = set(identities), set(identities)
    else:
        shuffled = list(identities)
        rng.shuffle(shuffled)
        cut = max(2, int(round(policy.train_fraction * len(identities))))
        train_ids = set(shuffled[:cut])
        eval_ids = set(shuffled[cut:])
        if len(eval_ids) < 2:
            raise ValueError("too few identities left for evaluation")
    train = [s for s in dataset.samples if s.identity in train_ids]
    eval_real = [s for s in real if s.identity in eval_ids]
    gallery = single_shot_gallery(eval_real, policy.gallery_camera, rng)
    probe = [s for s in eval_real if s.camera == policy.probe_camera]
    gallery_ids = {s.identity for s in gallery}
    probe_ids = {s.identity for s in probe}
    if gallery_ids != probe_ids:
        raise ValueError("gallery and probe identities do not coincide; need both cameras per identity")
    return DatasetSplit(train=train, gallery=gallery, probe=probe, policy_id=policy.policy_id)


def augment_with_translations(dataset: ImageDataset, registry) -> ImageDataset:
    """Add one translated copy of every real sample per other registry domain.

    Translated copies carry the source identity and camera, the target
    domain, and is_synthetic=True.
    """
    from .orchestrator import translate
    from .tensor import Tensor

    domains = registry.domains()
    ds_domains = set(dataset.domains())
    if not ds_domains <= set(domains):
        raise ValueError(f"dataset domains {sorted(ds_domains)} not covered by registry {domains}")
    samples = list(dataset.samples)
    for s in dataset.real_samples():
        for dst in domains:
            if dst == s.domain:
                continue
            out = translate(Tensor(s.image[None]), s.domain, dst, registry)
            samples.append(
                ImageSample(
                    image=out.values[0],
                    identity=s.identity,
                    domain=dst,
                    camera=s.camera,
                    is_synthetic=True,
                )
            )
    return ImageDataset(samples, dataset.image_shape)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FIELDS = ["identity", "domain", "camera", "is_synthetic", "pixels"]


def save_dataset(dataset: ImageDataset, path) -> None:
    c, h, w = dataset.image_shape
    header = {
        "record_count": len(dataset.samples),
        "image_shape": [c, h, w],
        "fields": _FIELDS,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(FORMAT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for s in dataset.samples:
            if s.image.shape != (c, h, w):
                raise ValueError("sample image shape differs from dataset shape")
            f.write(struct.pack("<IHHB", s.identity, s.domain, s.camera, int(s.is_synthetic)))
            f.write(s.image.astype("<f4").tobytes(order="C"))


def load_dataset(path) -> ImageDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise DatasetFormatError(f"file too short ({len(blob)} bytes) for a dataset header")
    if blob[:4] != FORMAT_MAGIC:
        raise DatasetFormatError(f"bad magic {blob[:4]!r} at offset 0")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + header_len:
        raise DatasetFormatError("truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"unreadable header: {e}") from e
    for key in ("record_count", "image_shape", "fields"):
        if key not in header:
            raise DatasetFormatError(f"header missing '{key}'")
    if header["fields"] != _FIELDS:
        raise DatasetFormatError(f"unexpected field list {header['fields']}")
    c, h, w = (int(v) for v in header["image_shape"])
    n = int(header["record_count"])
    pixel_bytes = 4 * c * h * w
    record_bytes = 9 + pixel_bytes
    offset = 12 + header_len
    if len(blob) != offset + n * record_bytes:
        raise DatasetFormatError(
            f"payload length {len(blob) - offset} does not match {n} records of {record_bytes} bytes"
        )
    samples = []
    for _ in range(n):
        identity, domain, camera, synth = struct.unpack_from("<IHHB", blob, offset)
        offset += 9
        pixels = np.frombuffer(blob, dtype="<f4", count=c * h * w, offset=offset)
        offset += pixel_bytes
        samples.append(
            ImageSample(
                image=pixels.astype(np.float64).reshape(c, h, w),
                identity=identity,
                domain=domain,
                camera=camera,
                is_synthetic=bool(synth),
            )
        )
    return ImageDataset(samples, (c, h, w))
