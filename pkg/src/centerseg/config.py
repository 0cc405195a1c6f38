"""Model/training configuration and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    # encoders
    hidden: int = 64
    heads: int = 4
    text_layers: int = 4
    image_layers: int = 6
    plug_layer: int = 5
    patch_size: int = 8
    image_size: int = 64
    text_len: int = 16
    mlp_ratio: int = 4
    # semantic grouping
    centers: int = 8
    cross_attn_depth: int = 2
    temperature: float = 1.0
    center_std: float = 0.02
    # reconstruction branch
    decoder_layers: int = 3
    mask_rate: float = 0.75
    rec_masked_only: bool = False
    # superpixels
    sp_sigma: float = 0.8
    sp_k: float = 0.4
    sp_min_size: int = 32
    # losses
    enable_rec: bool = True
    enable_sup: bool = True
    logit_scale_init: float = 1.0 / 0.07
    logit_scale_max: float = 100.0
    # inference
    threshold: float = 0.5
    include_background: bool = True
    # optimization
    lr_pretrained: float = 1e-3
    lr_fresh: float = 1e-3
    batch_size: int = 16
    steps: int = 500
    epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if not 0 <= self.plug_layer < self.image_layers:
            raise ConfigError(
                f"plug_layer={self.plug_layer} must satisfy 0 <= s < image_layers={self.image_layers}"
            )
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size={self.image_size} not divisible by patch_size={self.patch_size}"
            )
        if self.centers < 1:
            raise ConfigError("centers must be >= 1")
        if self.cross_attn_depth < 0:
            raise ConfigError("cross_attn_depth must be >= 0")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate={self.mask_rate} must lie in (0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.text_len < 2:
            raise ConfigError("text_len must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def third_stage_layers(self) -> int:
        return self.image_layers - self.plug_layer

    @classmethod
    def paper(cls) -> "ModelConfig":
        """Published ViT-B/16 scale settings."""
        return cls(
            hidden=768, heads=12, text_layers=12, image_layers=12, plug_layer=10,
            patch_size=16, image_size=224, text_len=32, centers=8, cross_attn_depth=2,
            decoder_layers=3, mask_rate=0.75, lr_pretrained=4e-6, lr_fresh=4e-3,
            batch_size=768, steps=0, epochs=10, threshold=0.75,
        )

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # -- flat text format ----------------------------------------------------

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, values: dict, base: "ModelConfig | None" = None) -> "ModelConfig":
        base = cls() if base is None else base
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, types[key], raw)
        return dataclasses.replace(base, **changes)

    @classmethod
    def loads(cls, text: str, base: "ModelConfig | None" = None) -> "ModelConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_dict(values, base)

    @classmethod
    def load(cls, path: str | Path, base: "ModelConfig | None" = None) -> "ModelConfig":
        return cls.loads(Path(path).read_text(), base)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, typ, raw):
    typ = typ if isinstance(typ, str) else typ.__name__
    if not isinstance(raw, str):
        raw = _format(raw)
    try:
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ})") from None
    return raw
