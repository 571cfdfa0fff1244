"""The desk-scale synthetic benchmark and its ablation grid."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

from ..data import generate_pretrain_corpus, generate_synthetic_cohort, openneuro_like
from ..model import FcEncoderConfig, ModelConfig, TsEncoderConfig
from ..pretrain import EncoderCheckpoint, mae_pretrain
from .experiment import ExperimentSpec, cross_validate
from .reports import write_summary_csv

log = logging.getLogger(__name__)

BENCHMARK_SEED = 7
CORPUS_SEED_OFFSET = 1000

# cell id -> (modality, pretrained, fusion)
ABLATION = {
    "exp5": ("fc", False, "none"),
    "exp7": ("ts", True, "none"),
    "exp8": ("both", False, "concat"),
    "exp9": ("both", True, "concat"),
}


def desk_model_config() -> ModelConfig:
    """Narrow two-layer encoders that train on one CPU core in minutes."""
    ts = TsEncoderConfig(layers=2, heads=4, model_dim=32, attention="nystrom", landmarks=32)
    fc = FcEncoderConfig(widths=[8, 16, 32, 64], output_dim=32)
    return ModelConfig(ts=ts, fc=fc)


@dataclass
class PretrainSettings:
    corpus_size: int = 200
    epochs: int = 30
    mask_ratio: float = 0.75
    batch_size: int = 8
    lr: float = 1e-3


def benchmark_encoder(ts: TsEncoderConfig, seed: int = BENCHMARK_SEED, settings: PretrainSettings | None = None,
                      profile=None) -> EncoderCheckpoint:
    """MAE-pretrained TS encoder on an unlabeled corpus disjoint from the cohort seed."""
    s = settings or PretrainSettings()
    profile = profile or openneuro_like()
    corpus = generate_pretrain_corpus(s.corpus_size, profile, seed + CORPUS_SEED_OFFSET)
    return mae_pretrain(corpus, ts, epochs=s.epochs, seed=seed, mask_ratio=s.mask_ratio, batch_size=s.batch_size,
                        lr=s.lr)


def ablation_specs(base: ExperimentSpec, cells=None) -> dict[str, ExperimentSpec]:
    out = {}
    for cid in cells or ABLATION:
        modality, pretrained, fusion = ABLATION[cid]
        spec = copy.deepcopy(base)
        spec.modality, spec.pretrained, spec.fusion, spec.name = modality, pretrained, fusion, cid
        out[cid] = spec
    return out


def run_ablation(cohort, base: ExperimentSpec, encoder: EncoderCheckpoint | None, out_dir: str | Path | None = None,
                 cells=None, jobs: int = 1) -> dict:
    """One CV run per cell, sorted by cell id; returns {cell: CVRun}."""
    runs = {}
    for cid, spec in sorted(ablation_specs(base, cells).items()):
        log.info("ablation cell %s", cid)
        runs[cid] = cross_validate(cohort, spec, encoder if spec.pretrained else None,
                                   None if out_dir is None else Path(out_dir) / cid, jobs)
    if out_dir is not None:
        write_summary_csv([r.report for r in runs.values()], Path(out_dir) / "ablation_summary.csv")
    return runs


def default_benchmark(seed: int = BENCHMARK_SEED):
    """(cohort, base spec) for the calibrated openneuro-like benchmark."""
    cohort = generate_synthetic_cohort(openneuro_like(), seed)
    return cohort, ExperimentSpec(seed=seed, model=desk_model_config())
