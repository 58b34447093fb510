"""Run configuration: every knob with a recorded default.

Defaults are the reference training recipe (weights 10/0.1/0.1, margins
-1/0.01, Adam at 2e-4 for 200 epochs decaying after 100, SGD at 1e-3 with
batch 128 for the backbone); desk-scale runs override epochs/batches/steps
explicitly.  Configs parse from JSON objects or ``key = value`` lines; both
forms produce identical TrainConfig values.  Unknown keys are hard errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Unknown key, bad type, or out-of-range value in a config."""


IDENTITY_VARIANTS = ("literal", "same_domain")
ADVERSARIAL_FORMS = ("non_saturating", "saturating")
PROFILES = ("desk", "full")


@dataclass
class TrainConfig:
    # translation-loss weights
    lambda_cyc: float = 10.0
    lambda_id: float = 0.1
    lambda_sem: float = 0.1
    # verification margins (relative / absolute)
    tau1: float = -1.0
    tau2: float = 0.01
    # translation training
    lr_gan: float = 0.0002
    gan_epochs: int = 200
    gan_decay_start: int = 100
    gan_batch: int = 1
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    # re-identification training
    lr_reid: float = 0.001
    reid_batch: int = 128
    reid_steps: int = 30000
    sgd_momentum: float = 0.9
    weight_verif: float = 1.0
    weight_ident: float = 1.0
    triplet_margin: float = 1.0
    synth_positive_prob: float = 0.5
    strict_quartets: bool = True
    normalize_embeddings: bool = False
    # variants
    identity_variant: str = "literal"
    adversarial_form: str = "non_saturating"
    shuffle_pairs: bool = False
    # data
    seed: int = 0
    profile: str = "desk"
    n_domains: int = 3
    n_identities: int = 20
    images_per_id: int = 4
    n_cameras: int = 2
    # persistence
    checkpoint_every: int = 0  # epochs; 0 = final only
    custom_profile: dict | None = field(default=None)

    def validate(self) -> "TrainConfig":
        if self.lambda_cyc < 0 or self.lambda_id < 0 or self.lambda_sem < 0:
            raise ConfigError("loss weights must be non-negative")
        for name in ("lr_gan", "lr_reid"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gan_epochs", "gan_batch", "reid_batch", "reid_steps", "images_per_id"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0 <= self.gan_decay_start <= self.gan_epochs):
            raise ConfigError("gan_decay_start must lie within [0, gan_epochs]")
        if not (0.0 <= self.synth_positive_prob <= 1.0):
            raise ConfigError("synth_positive_prob must be a probability")
        if not (0.0 <= self.sgd_momentum < 1.0):
            raise ConfigError("sgd_momentum must be in [0, 1)")
        if self.weight_verif < 0 or self.weight_ident < 0:
            raise ConfigError("stream weights must be non-negative")
        if self.triplet_margin < 0:
            raise ConfigError("triplet_margin must be non-negative")
        if self.identity_variant not in IDENTITY_VARIANTS:
            raise ConfigError(f"identity_variant must be one of {IDENTITY_VARIANTS}")
        if self.adversarial_form not in ADVERSARIAL_FORMS:
            raise ConfigError(f"adversarial_form must be one of {ADVERSARIAL_FORMS}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        if self.n_domains < 2:
            raise ConfigError("n_domains must be >= 2")
        if self.n_identities < 3:
            raise ConfigError("n_identities must be >= 3")
        if self.n_cameras < 2:
            raise ConfigError("n_cameras must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.custom_profile is not None and not isinstance(self.custom_profile, dict):
            raise ConfigError("custom_profile must be an object")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def network_profile(self):
        from .networks import NetworkProfile, get_profile

        if self.custom_profile is not None:
            return NetworkProfile.from_dict(self.custom_profile)
        return get_profile(self.profile)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_BOOL_FIELDS = {f.name for f in dataclasses.fields(TrainConfig) if f.type == "bool"}
_INT_FIELDS = {f.name for f in dataclasses.fields(TrainConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in dataclasses.fields(TrainConfig) if f.type == "float"}
_STR_FIELDS = {f.name for f in dataclasses.fields(TrainConfig) if f.type == "str"}


def _coerce(key: str, value) -> object:
    """Coerce a parsed JSON value or raw string to the field's type."""
    if key in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    if key in _INT_FIELDS:
        if isinstance(value, bool):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError as e:
                raise ConfigError(f"{key} expects an integer, got {value!r}") from e
        raise ConfigError(f"{key} expects an integer, got {value!r}")
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError as e:
                raise ConfigError(f"{key} expects a number, got {value!r}") from e
        raise ConfigError(f"{key} expects a number, got {value!r}")
    if key in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    if key == "custom_profile":
        if isinstance(value, dict) or value is None:
            return value
        raise ConfigError("custom_profile must be a JSON object (use the JSON config form)")
    raise ConfigError(f"unknown config key '{key}'")


def parse_config(text: str) -> TrainConfig:
    """Parse a JSON object or ``key = value`` lines into a TrainConfig."""
    stripped = text.lstrip()
    values: dict[str, object] = {}
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("JSON config must be an object")
        items = raw.items()
    else:
        items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            items.append((key.strip(), value.strip()))
    for key, value in items:
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"duplicate config key '{key}'")
        values[key] = _coerce(key, value)
    return TrainConfig(**values).validate()


def serialize_config(config: TrainConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n"
