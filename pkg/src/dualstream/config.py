"""Run configuration: JSON file merged over documented defaults."""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import canonical
from .data import PROFILES
from .harness.benchmark import BENCHMARK_SEED, PretrainSettings, desk_model_config
from .harness.experiment import ExperimentSpec, OptimizerConfig
from .model import ConfigError, ModelConfig


@dataclass
class Paths:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class GeneratorSettings:
    profile: str = "openneuro-like"
    n_rois: int = 32
    n_timepoints: int = 200
    noise_std: float = 0.5

    def build(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"generator.profile: unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.profile == "fidelity":
            return PROFILES[self.profile](self.n_timepoints)
        return PROFILES[self.profile](self.n_rois, self.n_timepoints, self.noise_std)


@dataclass
class ExperimentSettings:
    modality: str = "both"
    pretrained: bool = False
    fusion: str = "concat"
    protocol: str = "drug_agnostic"
    train_drug: str | None = None
    test_drug: str | None = None
    folds: int = 5
    epochs: int = 50
    batch_size: int = 8
    patience: int = 10
    min_delta: float = 1e-4
    length: int = 200
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class RunConfig:
    seed: int = BENCHMARK_SEED
    paths: Paths = field(default_factory=Paths)
    generator: GeneratorSettings = field(default_factory=GeneratorSettings)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    model: ModelConfig = field(default_factory=desk_model_config)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def spec(self, name: str = "") -> ExperimentSpec:
        e = asdict(self.experiment)
        e["optimizer"] = OptimizerConfig(**e["optimizer"])
        if e["modality"] != "both" and e["fusion"] == "concat":
            e["fusion"] = "none"
        return ExperimentSpec(seed=self.seed, model=copy.deepcopy(self.model), name=name, **e)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        self.generator.build().validate()
        if not 0 < self.pretrain.mask_ratio < 1:
            raise ConfigError(f"pretrain.mask_ratio: must lie in (0, 1), got {self.pretrain.mask_ratio}")
        if self.pretrain.corpus_size < 1 or self.pretrain.epochs < 0:
            raise ConfigError("pretrain.corpus_size must be >= 1 and pretrain.epochs >= 0")
        if self.experiment.folds < 2:
            raise ConfigError(f"experiment.folds: must be >= 2, got {self.experiment.folds}")
        try:
            self.spec().validate()
        except ConfigError as exc:
            raise ConfigError(f"experiment: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {
    RunConfig: {"paths": Paths, "generator": GeneratorSettings, "pretrain": PretrainSettings,
                "experiment": ExperimentSettings},
    ExperimentSettings: {"optimizer": OptimizerConfig},
}


def _merge(cls, default, given: dict, where: str):
    """Overlay ``given`` on a defaults instance, warning about unknown keys."""
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(given).__name__}")
    names = {f.name for f in fields(cls)}
    if cls is RunConfig:
        names = names | {"run"}  # provenance block written by write_resolved
    for key in sorted(set(given) - names):
        warnings.warn(f"unknown config key {where + '.' if where else ''}{key} ignored", stacklevel=3)
    values = {}
    for f in fields(cls):
        cur = getattr(default, f.name)
        if f.name not in given:
            values[f.name] = cur
            continue
        path = f"{where}.{f.name}" if where else f.name
        sub = _NESTED.get(cls, {}).get(f.name)
        if sub is not None:
            values[f.name] = _merge(sub, cur, given[f.name], path)
        elif cls is RunConfig and f.name == "model":
            base = cur.to_dict()
            for part in ("ts", "fc"):
                base[part].update(given[f.name].get(part, {}))
            base.update({k: v for k, v in given[f.name].items() if k not in ("ts", "fc")})
            try:
                values[f.name] = ModelConfig.from_dict(base)
            except TypeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        else:
            values[f.name] = given[f.name]
    return cls(**values)


def resolve(raw: dict) -> RunConfig:
    cfg = _merge(RunConfig, RunConfig(), raw, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a JSON config file (None gives the defaults)."""
    if path is None:
        return resolve({})
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return resolve(raw)


def write_resolved(cfg: RunConfig, out_dir: str | Path, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()
    if extra:
        doc["run"] = extra
    path = out / "resolved_config.json"
    path.write_text(canonical.dumps(doc, indent=1) + "\n")
    return path
