"""The dual-stream classifier: TS transformer + FC ResNet -> fusion -> linear head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import DTYPES, Tensor, no_grad
from ..numerics import ops
from ..preprocess import TokenSequence
from . import fusion, resnet, transformer
from .config import ConfigError, ModelConfig


class ParameterMismatchError(ValueError):
    pass


@dataclass
class Batch:
    """Preprocessed inputs for B subjects sharing one token layout."""

    tokens: np.ndarray  # (B, n, P)
    roi_index: np.ndarray  # (n,)
    patch_index: np.ndarray  # (n,)
    fc: np.ndarray  # (B, N, N)
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @classmethod
    def from_inputs(cls, seqs: list[TokenSequence], fcs: list[np.ndarray], ids=None, dtype=np.float32) -> "Batch":
        first = seqs[0]
        for s in seqs[1:]:
            if not (np.array_equal(s.roi_index, first.roi_index) and np.array_equal(s.patch_index, first.patch_index)):
                raise ValueError("all subjects in a batch need the same token layout")
        return cls(
            np.stack([s.tokens for s in seqs]).astype(dtype),
            first.roi_index,
            first.patch_index,
            np.stack(fcs).astype(dtype),
            list(ids or []),
        )


TSNORM_MEAN = "tsnorm.mean"
TSNORM_SCALE = "tsnorm.scale"
NORM_EPS = 1e-6


def init_head(dim: int, rng: np.random.Generator, dtype) -> dict[str, np.ndarray]:
    bound = np.sqrt(3.0 / dim)
    return {"head.w": rng.uniform(-bound, bound, (dim, 1)).astype(dtype), "head.b": np.zeros(1, dtype=dtype)}


def head_logit(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Single affine map to one logit per row."""
    if x.shape[-1] != p["head.w"].shape[0]:
        raise ValueError(f"head expects {p['head.w'].shape[0]} features, got {x.shape[-1]}")
    out = ops.add(ops.matmul(x, p["head.w"]), p["head.b"])
    return ops.reshape(out, out.shape[:-1])


class DualStreamModel:
    """Parameters live in ``params`` as plain arrays; each forward wraps them as leaves."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None,
                 provenance: dict | None = None):
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = DTYPES[config.dtype]
        fresh = self._initial_params(seed)
        if params is not None:
            self._check_params(params, fresh)
            fresh = {k: np.asarray(params[k]) for k in fresh}
        self.params = fresh
        self.provenance = dict(provenance or {"pretrained": False, "init_seed": seed})

    # -- structure --

    def _initial_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng([int(seed), 0x5EED])
        params: dict[str, np.ndarray] = {}
        if cfg.modality in ("ts", "both"):
            params.update(transformer.init_ts_params(cfg.ts, np.random.default_rng([int(seed), 1]), self.dtype))
            params[TSNORM_MEAN] = np.zeros(cfg.ts.model_dim, dtype=self.dtype)
            params[TSNORM_SCALE] = np.ones(cfg.ts.model_dim, dtype=self.dtype)
        if cfg.modality in ("fc", "both"):
            params.update(resnet.init_fc_params(cfg.fc, np.random.default_rng([int(seed), 2]), self.dtype))
        if cfg.modality == "both":
            params.update(fusion.init_fusion_params(cfg.fusion, cfg.feature_dim, np.random.default_rng([int(seed), 3]), self.dtype))
        params.update(init_head(cfg.head_dim, rng, self.dtype))
        return params

    @staticmethod
    def _check_params(params, expected) -> None:
        missing = sorted(set(expected) - set(params))
        if missing:
            raise ParameterMismatchError(f"missing parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        extra = sorted(set(params) - set(expected))
        if extra:
            raise ParameterMismatchError(f"unexpected parameters: {extra[:5]}{'...' if len(extra) > 5 else ''}")
        for k, v in expected.items():
            if tuple(params[k].shape) != v.shape:
                raise ParameterMismatchError(f"parameter {k!r} has shape {tuple(params[k].shape)}, expected {v.shape}")

    def load_ts_encoder(self, encoder_params: dict[str, np.ndarray], freeze: bool = True) -> None:
        """Install pretrained ``ts.*`` weights (the MAE decoder is ignored)."""
        own = {k: v for k, v in self.params.items() if k.startswith("ts.")}
        if not own:
            raise ConfigError("model has no TS encoder to load into")
        given = {k: v for k, v in encoder_params.items() if k.startswith("ts.")}
        self._check_params(given, own)
        for k in own:
            self.params[k] = np.asarray(given[k], dtype=self.dtype).copy()
        self.config.ts.frozen = freeze
        self.provenance["pretrained"] = True

    def is_frozen(self, name: str) -> bool:
        if name.startswith("tsnorm."):
            return True
        return name.startswith("ts.") and self.config.ts.frozen

    def set_ts_normalizer(self, features: np.ndarray) -> None:
        """Standardize frozen R_T with statistics of ``features`` (training rows)."""
        f = np.asarray(features, dtype=np.float64)
        self.params[TSNORM_MEAN] = f.mean(axis=0).astype(self.dtype)
        self.params[TSNORM_SCALE] = (1.0 / (f.std(axis=0) + NORM_EPS)).astype(self.dtype)

    def trainable_names(self) -> list[str]:
        return sorted(k for k in self.params if not self.is_frozen(k))

    def leaves(self, params: dict[str, np.ndarray] | None = None) -> dict[str, Tensor]:
        params = self.params if params is None else params
        return {k: Tensor(v, requires_grad=not self.is_frozen(k), name=k) for k, v in params.items()}

    # -- forward pieces --

    def ts_features(self, batch: Batch, p: dict[str, Tensor] | None = None) -> Tensor:
        p = self.leaves() if p is None else p
        return transformer.ts_encode(self.config.ts, p, batch.tokens, batch.roi_index, batch.patch_index)

    def fc_features(self, batch: Batch, p: dict[str, Tensor] | None = None) -> Tensor:
        p = self.leaves() if p is None else p
        return resnet.fc_encode(self.config.fc, p, Tensor(batch.fc))

    def fused(self, batch: Batch, p: dict[str, Tensor] | None = None, ts_cache: np.ndarray | None = None) -> Tensor:
        """Head input: R_TC for ``both``, otherwise the single enabled stream."""
        p = self.leaves() if p is None else p
        mod = self.config.modality
        rt = rc = None
        if mod in ("ts", "both"):
            rt = Tensor(ts_cache) if ts_cache is not None else self.ts_features(batch, p)
            rt = ops.mul(ops.sub(rt, p[TSNORM_MEAN]), p[TSNORM_SCALE])
        if mod in ("fc", "both"):
            rc = self.fc_features(batch, p)
        if mod == "ts":
            return rt
        if mod == "fc":
            return rc
        return fusion.fuse(rt, rc, self.config.fusion, p)

    def logits(self, batch: Batch, p: dict[str, Tensor] | None = None, ts_cache: np.ndarray | None = None) -> Tensor:
        p = self.leaves() if p is None else p
        return head_logit(self.fused(batch, p, ts_cache), p)

    def predict_proba(self, batch: Batch, ts_cache: np.ndarray | None = None) -> np.ndarray:
        with no_grad():
            z = self.logits(batch, ts_cache=ts_cache).data.astype(np.float64)
        return 1.0 / (1.0 + np.exp(-z))

    def features(self, batch: Batch) -> np.ndarray:
        with no_grad():
            return self.fused(batch).data.copy()

    def head_params(self) -> tuple[np.ndarray, float]:
        return self.params["head.w"][:, 0].astype(np.float64), float(self.params["head.b"][0])
