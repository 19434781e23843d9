"""Model and training configuration, named profiles, and the flat config file format.

Config files are ``key = value`` lines; ``#`` starts a comment.  Tuple values
are comma separated (``channels = 8, 16, 32``).  Keys are the field names of
:class:`ModelConfig` and :class:`TrainConfig`; an unknown key is an error.
"""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple = (64, 64)
    in_channels: int = 1
    patch_strides: tuple = (4, 2, 2)
    channels: tuple = (8, 16, 32)
    blocks: tuple = (1, 1, 2)
    heads3: int = 2
    mlp_ratio: int = 4
    conv_kernel: int = 5
    decoder_depth: int = 2
    decoder_dim: int = 32
    decoder_heads: int = 2
    mask_stride: int = 4
    c4: Optional[int] = None
    masking: str = "information"
    learned_gray_conv: bool = False
    encoder_pos_embed: bool = True
    normalize_pix: bool = False
    loss_mode: str = "masked_mean"

    def __post_init__(self):
        ps = tuple(self.patch_strides)
        if len(ps) != 3 or ps[0] * ps[1] * ps[2] != 16:
            raise ConfigurationError(f"patch_strides must have product 16, got {ps}")
        if ps[0] != 4 or ps[1] != 2 or ps[2] != 2:
            # mask_block1/mask_block2 are fixed 4x/2x upsamplings of the template
            raise ConfigurationError(f"patch_strides must be (4, 2, 2), got {ps}")
        for name in ("channels", "blocks", "image_size"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
        object.__setattr__(self, "patch_strides", ps)
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigurationError(f"channels must be three positive ints, got {self.channels}")
        if len(self.blocks) != 3 or min(self.blocks) < 0:
            raise ConfigurationError(f"blocks must be three non-negative ints, got {self.blocks}")
        if self.channels[2] % self.heads3:
            raise ConfigurationError(
                f"C3={self.channels[2]} is not divisible by heads3={self.heads3}"
            )
        if self.decoder_heads < 1 or self.decoder_dim // self.decoder_heads < 1:
            raise ConfigurationError("decoder_dim must be at least decoder_heads")
        for name, dim in (("C3", self.channels[2]), ("decoder_dim", self.decoder_dim)):
            if dim % 4:
                raise ConfigurationError(f"{name}={dim} must be divisible by 4 for 2-D sin-cos embeddings")
        if self.mask_stride < 1:
            raise ConfigurationError(f"mask_stride must be >= 1, got {self.mask_stride}")
        if len(self.image_size) != 2 or any(s % 16 for s in self.image_size):
            raise ConfigurationError(f"image_size must be multiples of 16, got {self.image_size}")
        if self.masking not in ("information", "random"):
            raise ConfigurationError(f"masking must be 'information' or 'random', got {self.masking!r}")
        if self.loss_mode not in ("masked_mean", "per_image"):
            raise ConfigurationError(f"loss_mode must be 'masked_mean' or 'per_image', got {self.loss_mode!r}")
        if self.conv_kernel % 2 == 0:
            raise ConfigurationError("conv_kernel must be odd")

    @property
    def out_c4(self):
        return self.channels[2] if self.c4 is None else self.c4

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    warmup_epochs: int = 3
    base_lr: float = 2e-3
    min_lr: float = 0.0
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    crop_size: tuple = (64, 64)
    channel_mode: str = "gray"
    checkpoint_every: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "crop_size", tuple(int(c) for c in self.crop_size))
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError(
                f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})"
            )
        if not self.base_lr > 0:
            raise ConfigurationError("base_lr must be > 0")
        if self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigurationError("min_lr must lie in [0, base_lr]")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if len(self.crop_size) != 2 or any(c < 16 or c % 16 for c in self.crop_size):
            raise ConfigurationError(f"crop_size must be positive multiples of 16, got {self.crop_size}")
        if self.channel_mode not in ("gray", "replicate"):
            raise ConfigurationError(f"channel_mode must be 'gray' or 'replicate', got {self.channel_mode!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


TINY_MODEL = ModelConfig()
BASE_MODEL = ModelConfig(
    image_size=(224, 224),
    channels=(256, 384, 768),
    blocks=(2, 2, 11),
    heads3=12,
    decoder_depth=2,
    decoder_dim=512,
    decoder_heads=12,
    mask_stride=4,
)
DESK_TRAIN = TrainConfig()
BASE_TRAIN = TrainConfig(
    epochs=400,
    warmup_epochs=40,
    base_lr=1.5e-4,
    batch_size=256,
    crop_size=(224, 224),
)

PROFILES = {
    "tiny": (TINY_MODEL, DESK_TRAIN),
    "desk": (TINY_MODEL, DESK_TRAIN),
    "base": (BASE_MODEL, BASE_TRAIN),
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _coerce(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in raw.replace("x", ",").split(",") if p.strip()]
        kind = float if any(isinstance(d, float) for d in default) else int
        return tuple(kind(p) for p in parts)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, int):
        return int(raw)
    if default is None:
        return None if raw.lower() in ("", "none") else int(raw)
    return raw


def parse_config_text(text, base=("tiny",)):
    """Parse flat key-value text into ``(ModelConfig, TrainConfig)``.

    A ``profile = NAME`` line selects the starting point; other keys override it.
    """
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    profile = pairs.pop("profile", base[0])
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return apply_overrides(*PROFILES[profile], pairs)


def apply_overrides(model_cfg, train_cfg, overrides):
    """Apply ``{key: raw_string_or_value}`` overrides; unknown keys raise."""
    model_changes, train_changes = {}, {}
    for key, value in overrides.items():
        if key in _MODEL_KEYS:
            target, cfg = model_changes, model_cfg
        elif key in _TRAIN_KEYS:
            target, cfg = train_changes, train_cfg
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = _coerce(value, getattr(cfg, key))
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key!r}: {exc}") from None
        target[key] = value
    try:
        return model_cfg.replace(**model_changes), train_cfg.replace(**train_changes)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(name):
    """Load a profile name (``tiny``, ``desk``, ``base``) or a config file path."""
    if name in PROFILES:
        return PROFILES[name]
    path = Path(name)
    if not path.is_file():
        raise ConfigurationError(f"config {name!r} is neither a profile name nor a readable file")
    return parse_config_text(path.read_text())


def config_to_dict(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def config_from_dict(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def format_config_text(model_cfg, train_cfg):
    lines = ["# infmae config"]
    for cfg in (model_cfg, train_cfg):
        for key, value in config_to_dict(cfg).items():
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
