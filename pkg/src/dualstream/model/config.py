from __future__ import annotations

from dataclasses import asdict, dataclass, field

FUSIONS = ("concat", "sum", "cross_uni", "cross_bi", "moe")
MODALITIES = ("ts", "fc", "both")


class ConfigError(ValueError):
    pass


@dataclass
class TsEncoderConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ff_multiplier: int = 4
    patch_size: int = 20
    max_rois: int = 424
    max_patches: int = 10
    attention: str = "exact"
    landmarks: int = 32
    frozen: bool = False

    @property
    def max_tokens(self) -> int:
        return self.max_rois * self.max_patches

    def validate(self) -> None:
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("ts encoder needs layers >= 1 and heads >= 1")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.attention not in ("exact", "nystrom"):
            raise ConfigError(f"attention must be 'exact' or 'nystrom', got {self.attention!r}")
        if min(self.patch_size, self.max_rois, self.max_patches, self.ff_multiplier, self.landmarks) < 1:
            raise ConfigError("ts encoder sizes must be positive")


@dataclass
class FcEncoderConfig:
    widths: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    blocks_per_stage: int = 2
    norm_groups: int = 4
    output_dim: int = 256

    def validate(self) -> None:
        w = self.widths
        if len(w) != 4:
            raise ConfigError(f"fc encoder needs 4 stages, got {len(w)}")
        if min(w) < 1 or any(b < a for a, b in zip(w, w[1:])):
            raise ConfigError(f"stage widths must be positive and non-decreasing, got {w}")
        for c in w:
            if c % min(self.norm_groups, c):
                raise ConfigError(f"width {c} not divisible into {self.norm_groups} norm groups")
        if self.blocks_per_stage < 1 or self.output_dim < 1:
            raise ConfigError("blocks_per_stage and output_dim must be positive")


@dataclass
class ModelConfig:
    ts: TsEncoderConfig = field(default_factory=TsEncoderConfig)
    fc: FcEncoderConfig = field(default_factory=FcEncoderConfig)
    modality: str = "both"
    fusion: str = "concat"
    dtype: str = "f32"

    @property
    def feature_dim(self) -> int:
        return self.ts.model_dim

    @property
    def head_dim(self) -> int:
        if self.modality == "both" and self.fusion == "concat":
            return 2 * self.feature_dim
        return self.feature_dim

    def validate(self) -> None:
        self.ts.validate()
        self.fc.validate()
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.ts.model_dim != self.fc.output_dim:
            raise ConfigError(f"ts model_dim {self.ts.model_dim} != fc output_dim {self.fc.output_dim}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        ts = TsEncoderConfig(**d.pop("ts", {}))
        fc = FcEncoderConfig(**d.pop("fc", {}))
        return cls(ts=ts, fc=fc, **d)
