"""Tiny configurations that keep end-to-end tests to seconds."""

from __future__ import annotations

from dualstream import data
from dualstream.harness import ExperimentSpec
from dualstream.model import FcEncoderConfig, ModelConfig, TsEncoderConfig
from dualstream.pretrain import mae_pretrain

LENGTH = 40
PATCH = 20


def tiny_ts(**kw) -> TsEncoderConfig:
    base = dict(layers=1, heads=2, model_dim=8, ff_multiplier=2, patch_size=PATCH, max_rois=16, max_patches=4)
    base.update(kw)
    return TsEncoderConfig(**base)


def tiny_model(**kw) -> ModelConfig:
    return ModelConfig(ts=tiny_ts(), fc=FcEncoderConfig(widths=[4, 4, 8, 8], norm_groups=4, output_dim=8), **kw)


def tiny_profile(**kw):
    return data.openneuro_like(n_rois=8, n_timepoints=LENGTH, **kw)


def tiny_cohort(seed: int = 7):
    return data.generate_synthetic_cohort(tiny_profile(), seed)


def tiny_spec(**kw) -> ExperimentSpec:
    base = dict(seed=3, epochs=3, length=LENGTH, model=tiny_model())
    base.update(kw)
    return ExperimentSpec(**base)


def tiny_encoder(seed: int = 0, epochs: int = 1):
    corpus = data.generate_pretrain_corpus(8, tiny_profile(), 99)
    return mae_pretrain(corpus, tiny_ts(), epochs=epochs, seed=seed, length=LENGTH)
