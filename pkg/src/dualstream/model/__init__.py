"""Dual-stream network components."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import FUSIONS, MODALITIES, ConfigError, FcEncoderConfig, ModelConfig, TsEncoderConfig
from .fusion import fuse
from .network import Batch, DualStreamModel, ParameterMismatchError, head_logit
from .resnet import NotSquareError, fc_encode
from .transformer import TokenOverflowError, ts_encode

__all__ = [
    "Batch",
    "CheckpointError",
    "ConfigError",
    "DualStreamModel",
    "FUSIONS",
    "FcEncoderConfig",
    "MODALITIES",
    "ModelConfig",
    "NotSquareError",
    "ParameterMismatchError",
    "TokenOverflowError",
    "TsEncoderConfig",
    "fc_encode",
    "fuse",
    "head_logit",
    "load_checkpoint",
    "save_checkpoint",
    "ts_encode",
]
