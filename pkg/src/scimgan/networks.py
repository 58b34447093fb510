"""Declarative network construction for encoders, decoders, discriminators,
and the re-identification backbone.

Two built-in profiles:

* ``desk``  -- 16x16x3 images; small enough that every test and default run
  trains in seconds while keeping the structural shape of the full model
  (strided-conv encoder, residual trunk, mirrored transposed-conv decoder
  with tanh output, sigmoid discriminator, two-tap backbone).
* ``full``  -- 256x256x3; three encoder convs, nine residual blocks, mirrored
  decoder.  Per-layer widths are configurable through custom profiles.

The residual trunk sits at the front of the decoder, so the encoder output is
the shared latent that decoders of any domain can consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Activation, Conv2d, Dense, InstanceNorm, Layer, ResidualBlock, TransposedConv2d
from .rng import Rng
from .tensor import Tensor

_CONV_KINDS = ("conv", "transposed_conv")
_KINDS = _CONV_KINDS + ("dense", "residual_block", "instance_norm", "activation")


class ProfileError(ValueError):
    """Inconsistent layer specification or profile."""


@dataclass
class LayerSpec:
    """One entry of a network description.

    ``channels`` is the output channel count for convolutional kinds and the
    neuron count for dense.  ``kernel``/``stride`` are required exactly for
    convolutional kinds; padding defaults keep spatial sizes on the
    halve/double grid (kernel//2 for conv, (kernel-stride)//2 for
    transposed_conv).
    """

    kind: str
    channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    activation: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ProfileError(f"unknown layer kind '{self.kind}'")
        convolutional = self.kind in _CONV_KINDS
        if convolutional:
            if self.kernel is None or self.stride is None:
                raise ProfileError(f"{self.kind} needs kernel and stride")
            if self.kernel < 1 or self.stride < 1:
                raise ProfileError("kernel and stride must be positive")
            if self.padding is None:
                if self.kind == "conv":
                    self.padding = self.kernel // 2
                else:
                    self.padding = (self.kernel - self.stride) // 2
        elif self.kernel is not None or self.stride is not None:
            raise ProfileError(f"{self.kind} must not carry kernel/stride")
        if self.kind in _CONV_KINDS + ("dense", "residual_block") and (
            self.channels is None or self.channels < 1
        ):
            raise ProfileError(f"{self.kind} needs a positive channel/neuron count")
        if self.kind == "activation" and self.activation not in (
            "relu",
            "leaky_relu",
            "tanh",
            "sigmoid",
        ):
            raise ProfileError(f"activation entry needs a valid activation, got {self.activation!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("channels", "kernel", "stride", "padding", "activation"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        allowed = {"kind", "channels", "kernel", "stride", "padding", "activation"}
        unknown = set(d) - allowed
        if unknown:
            raise ProfileError(f"unknown LayerSpec keys: {sorted(unknown)}")
        return cls(**d)


def conv(channels, kernel, stride, padding=None):
    return LayerSpec("conv", channels=channels, kernel=kernel, stride=stride, padding=padding)


def tconv(channels, kernel, stride, padding=None):
    return LayerSpec("transposed_conv", channels=channels, kernel=kernel, stride=stride, padding=padding)


def dense(neurons):
    return LayerSpec("dense", channels=neurons)


def inorm():
    return LayerSpec("instance_norm")


def act(name):
    return LayerSpec("activation", activation=name)


@dataclass
class NetworkProfile:
    """Complete description of all four network roles.

    ``image_size`` is (H, W, C).  ``residual_blocks`` is the trunk length,
    instantiated at the front of the decoder at the encoder's output width.
    ``reid_backbone`` lists the backbone trunk; an identity-classification
    head (dense, one neuron per identity) is appended at build time, at index
    ``identification_tap``.  ``verification_tap`` indexes the trunk layer
    whose output is the verification embedding.
    """

    name: str
    image_size: tuple[int, int, int]
    encoder: list[LayerSpec]
    residual_blocks: int
    decoder: list[LayerSpec]
    discriminator: list[LayerSpec]
    reid_backbone: list[LayerSpec]
    verification_tap: int
    identification_tap: int = field(default=-1)

    def __post_init__(self):
        if self.identification_tap == -1:
            self.identification_tap = len(self.reid_backbone)
        self.validate()

    def validate(self):
        if self.residual_blocks < 0:
            raise ProfileError("residual_blocks must be >= 0")
        if not (0 <= self.verification_tap < len(self.reid_backbone)):
            raise ProfileError("verification_tap out of range")
        if self.identification_tap != len(self.reid_backbone):
            raise ProfileError("identification_tap must index the appended identity head")
        if self.verification_tap >= self.identification_tap:
            raise ProfileError("verification_tap must precede identification_tap")
        if self.name == "full":
            n_enc_convs = sum(1 for s in self.encoder if s.kind == "conv")
            if n_enc_convs != 3:
                raise ProfileError("full profile requires exactly 3 encoder convolutions")
            if self.residual_blocks != 9:
                raise ProfileError("full profile requires exactly 9 residual blocks")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "image_size": list(self.image_size),
            "encoder": [s.to_dict() for s in self.encoder],
            "residual_blocks": self.residual_blocks,
            "decoder": [s.to_dict() for s in self.decoder],
            "discriminator": [s.to_dict() for s in self.discriminator],
            "reid_backbone": [s.to_dict() for s in self.reid_backbone],
            "verification_tap": self.verification_tap,
            "identification_tap": self.identification_tap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkProfile":
        allowed = {
            "name",
            "image_size",
            "encoder",
            "residual_blocks",
            "decoder",
            "discriminator",
            "reid_backbone",
            "verification_tap",
            "identification_tap",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ProfileError(f"unknown NetworkProfile keys: {sorted(unknown)}")
        d = dict(d)
        d["image_size"] = tuple(d["image_size"])
        for key in ("encoder", "decoder", "discriminator", "reid_backbone"):
            d[key] = [LayerSpec.from_dict(s) for s in d[key]]
        return cls(**d)


def desk_profile() -> NetworkProfile:
    return NetworkProfile(
        name="desk",
        image_size=(16, 16, 3),
        encoder=[
            conv(16, 3, 1), inorm(), act("relu"),
            conv(32, 3, 2), inorm(), act("relu"),
            conv(32, 3, 2), inorm(), act("relu"),
        ],
        residual_blocks=2,
        decoder=[
            tconv(32, 4, 2), inorm(), act("relu"),
            tconv(16, 4, 2), inorm(), act("relu"),
            conv(3, 3, 1), act("tanh"),
        ],
        discriminator=[
            conv(16, 3, 2), act("leaky_relu"),
            conv(32, 3, 2), act("leaky_relu"),
            dense(1), act("sigmoid"),
        ],
        reid_backbone=[
            conv(16, 3, 2), inorm(), act("relu"),
            conv(32, 3, 2), inorm(), act("relu"),
            conv(32, 3, 2), inorm(), act("relu"),
            dense(128),  # verification embedding
            act("relu"),
            dense(64), act("relu"),
        ],
        verification_tap=9,
    )


def full_profile() -> NetworkProfile:
    return NetworkProfile(
        name="full",
        image_size=(256, 256, 3),
        encoder=[
            conv(64, 7, 1), inorm(), act("relu"),
            conv(128, 3, 2), inorm(), act("relu"),
            conv(256, 3, 2), inorm(), act("relu"),
        ],
        residual_blocks=9,
        decoder=[
            tconv(128, 4, 2), inorm(), act("relu"),
            tconv(64, 4, 2), inorm(), act("relu"),
            conv(3, 7, 1), act("tanh"),
        ],
        discriminator=[
            conv(64, 4, 2), act("leaky_relu"),
            conv(128, 4, 2), act("leaky_relu"),
            conv(256, 4, 2), act("leaky_relu"),
            conv(512, 4, 2), act("leaky_relu"),
            dense(1), act("sigmoid"),
        ],
        reid_backbone=[
            conv(64, 7, 4, padding=3), inorm(), act("relu"),
            conv(128, 5, 2, padding=2), inorm(), act("relu"),
            conv(256, 3, 2), inorm(), act("relu"),
            conv(256, 3, 2), inorm(), act("relu"),
            dense(512),  # verification embedding
            act("relu"),
            dense(256), act("relu"),
        ],
        verification_tap=12,
    )


def get_profile(name: str) -> NetworkProfile:
    if name == "desk":
        return desk_profile()
    if name == "full":
        return full_profile()
    raise ProfileError(f"unknown profile '{name}'")


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


def _conv_out(h, w, k, s, p):
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def _tconv_out(h, w, k, s, p):
    return (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k


def _assemble(specs: list[LayerSpec], in_shape, rng: Rng) -> tuple[list[Layer], tuple]:
    """Instantiate layers, inferring input widths; returns (layers, out_shape).

    Shapes are (C, H, W) through convolutional stages and (F,) after dense.
    """
    layers: list[Layer] = []
    shape = in_shape
    for spec in specs:
        if spec.kind == "conv":
            if len(shape) != 3:
                raise ProfileError("conv after flattening is not supported")
            c, h, w = shape
            layers.append(Conv2d(c, spec.channels, spec.kernel, spec.stride, spec.padding, rng))
            h, w = _conv_out(h, w, spec.kernel, spec.stride, spec.padding)
            if h < 1 or w < 1:
                raise ProfileError("conv chain shrinks image to nothing")
            shape = (spec.channels, h, w)
        elif spec.kind == "transposed_conv":
            if len(shape) != 3:
                raise ProfileError("transposed_conv needs spatial input")
            c, h, w = shape
            layers.append(TransposedConv2d(c, spec.channels, spec.kernel, spec.stride, spec.padding, rng))
            h, w = _tconv_out(h, w, spec.kernel, spec.stride, spec.padding)
            shape = (spec.channels, h, w)
        elif spec.kind == "residual_block":
            if len(shape) != 3 or shape[0] != spec.channels:
                raise ProfileError(f"residual_block channels {spec.channels} do not match input {shape}")
            layers.append(ResidualBlock(spec.channels, 3, rng))
        elif spec.kind == "dense":
            in_features = int(np.prod(shape))
            layers.append(Dense(in_features, spec.channels, rng))
            shape = (spec.channels,)
        elif spec.kind == "instance_norm":
            if len(shape) != 3:
                raise ProfileError("instance_norm needs spatial input")
            layers.append(InstanceNorm())
        elif spec.kind == "activation":
            layers.append(Activation(spec.activation))
    return layers, shape


class Network:
    """Ordered layers with a stable parameter-name map.

    ``forward_count`` counts forward invocations (used by tests asserting
    that the shared latent is encoded once per multi-target translation).
    """

    def __init__(self, name: str, layers: list[Layer], in_shape, out_shape):
        self.name = name
        self.layers = layers
        self.in_shape = in_shape
        self.out_shape = out_shape
        self.forward_count = 0

    def forward(self, x: Tensor) -> Tensor:
        self.forward_count += 1
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            for pname, tensor in layer.parameters():
                out[f"{i:02d}_{layer.tag}.{pname}"] = tensor
        return out


class ReidBackbone(Network):
    """Backbone with a low-layer verification tap and an identity head.

    Verification features come from a lower layer than the identification
    logits: nearby layers keep detail that separates instances, while the
    head layers specialize toward class labels.  All four training streams
    run through this single parameter set.
    """

    def __init__(self, name, layers, in_shape, out_shape, verification_tap, identification_tap, n_identities):
        super().__init__(name, layers, in_shape, out_shape)
        if not (0 <= verification_tap < identification_tap < len(layers)):
            raise ProfileError("tap index out of range")
        self.verification_tap = verification_tap
        self.identification_tap = identification_tap
        self.n_identities = n_identities

    def forward_reid(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (verification embedding, identification logits)."""
        self.forward_count += 1
        verif = None
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if i == self.verification_tap:
                verif = x
        return verif, x

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_reid(x)[1]


def _chw(profile: NetworkProfile) -> tuple[int, int, int]:
    h, w, c = profile.image_size
    return (c, h, w)


def _latent_shape(profile: NetworkProfile) -> tuple:
    _, shape = _assemble(profile.encoder, _chw(profile), Rng(0))
    return shape


def build_encoder(profile: NetworkProfile, rng: Rng) -> Network:
    layers, out_shape = _assemble(profile.encoder, _chw(profile), rng)
    return Network("encoder", layers, _chw(profile), out_shape)


def build_decoder(profile: NetworkProfile, rng: Rng) -> Network:
    latent = _latent_shape(profile)
    if len(latent) != 3:
        raise ProfileError("encoder must produce a spatial latent")
    trunk = [LayerSpec("residual_block", channels=latent[0]) for _ in range(profile.residual_blocks)]
    layers, out_shape = _assemble(trunk + list(profile.decoder), latent, rng)
    if out_shape != _chw(profile):
        raise ProfileError(f"decoder output {out_shape} does not match image shape {_chw(profile)}")
    return Network("decoder", layers, latent, out_shape)


def build_discriminator(profile: NetworkProfile, rng: Rng) -> Network:
    layers, out_shape = _assemble(profile.discriminator, _chw(profile), rng)
    if out_shape != (1,):
        raise ProfileError(f"discriminator must score one value per image, got {out_shape}")
    if not (layers and isinstance(layers[-1], Activation) and layers[-1].kind == "sigmoid"):
        raise ProfileError("discriminator must end in a sigmoid")
    return Network("discriminator", layers, _chw(profile), out_shape)


def build_reid_backbone(profile: NetworkProfile, n_identities: int, rng: Rng) -> ReidBackbone:
    if n_identities < 2:
        raise ProfileError("need at least 2 identities for the identification head")
    specs = list(profile.reid_backbone) + [dense(n_identities)]
    layers, out_shape = _assemble(specs, _chw(profile), rng)
    return ReidBackbone(
        "reid_backbone",
        layers,
        _chw(profile),
        out_shape,
        profile.verification_tap,
        profile.identification_tap,
        n_identities,
    )


def parameter_count(network: Network) -> int:
    return int(np.sum([t.size for t in network.parameters().values()], dtype=np.int64))
