"""Masked-autoencoder pretraining of the TS encoder on an unlabeled corpus.

Only visible tokens pass through the encoder; a shallow decoder sees the
encoder states plus a learned mask token at every masked position and
regresses the raw patch values. The decoder is discarded afterwards.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Cohort
from .model import checkpoint
from .model.config import TsEncoderConfig
from .model.init import normal
from .model.transformer import block, encode_states, init_block, init_linear, init_ts_params, linear
from .numerics import AdamState, Graph, Tensor, adam_step, backward, no_grad
from .numerics import ops
from .preprocess import DEFAULT_LENGTH, TokenSequence, prepare

log = logging.getLogger(__name__)

DEFAULT_MASK_RATIO = 0.75
DEFAULT_EPOCHS = 30
DEFAULT_BATCH = 8
DECODER_DEPTH = 2
DECODER_POS_STD = 0.02


class PretrainDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class MaskPlan:
    ratio: float
    masked: np.ndarray  # sorted token indices
    n_tokens: int
    seed: int

    @property
    def visible(self) -> np.ndarray:
        keep = np.ones(self.n_tokens, dtype=bool)
        keep[self.masked] = False
        return np.flatnonzero(keep)

    def weights(self) -> np.ndarray:
        w = np.zeros(self.n_tokens)
        w[self.masked] = 1.0
        return w


def plan_mask(n_tokens: int, ratio: float, seed) -> MaskPlan:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    k = int(round(ratio * n_tokens))
    rng = np.random.default_rng(seed)
    masked = np.sort(rng.choice(n_tokens, size=k, replace=False))
    return MaskPlan(ratio, masked, n_tokens, seed if isinstance(seed, int) else -1)


def mask_tokens(tokens: TokenSequence, ratio: float, seed: int) -> tuple[TokenSequence, MaskPlan]:
    """Drop a uniformly random ``round(ratio * n)`` subset of tokens."""
    plan = plan_mask(len(tokens), ratio, seed)
    vis = plan.visible
    visible = TokenSequence(tokens.tokens[vis], tokens.roi_index[vis], tokens.patch_index[vis],
                            tokens.n_rois, tokens.n_patches)
    return visible, plan


def reconstruction_loss(predicted, true, plans):
    """Mean squared error over masked positions only.

    ``predicted`` is an array or Tensor of shape (n, P) or (B, n, P);
    ``plans`` is one MaskPlan or one per batch row.
    """
    true = np.asarray(true)
    pshape = tuple(predicted.shape)
    if pshape != true.shape:
        raise ValueError(f"predicted patches {pshape} and true patches {true.shape} differ in shape")
    single = isinstance(plans, MaskPlan)
    plans = [plans] if single else list(plans)
    weights = np.stack([p.weights() for p in plans])
    if single:
        weights = weights[0]
    if weights.shape != pshape[:-1]:
        raise ValueError(f"mask plans cover {weights.shape} tokens, predictions have {pshape[:-1]}")
    count = weights.sum() * pshape[-1]
    w = weights[..., None].astype(true.dtype) / count
    if isinstance(predicted, Tensor):
        diff = ops.sub(predicted, true)
        return ops.sum(ops.mul(ops.mul(diff, diff), w))
    diff = np.asarray(predicted, dtype=np.float64) - true
    return float(np.sum(diff * diff * w))


def init_decoder_params(cfg: TsEncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    m = cfg.model_dim
    params = {
        "mae.mask_token": normal(rng, (m,), 0.02, dtype),
        "mae.roi_embed": normal(rng, (cfg.max_rois, m), DECODER_POS_STD, dtype),
        "mae.patch_embed": normal(rng, (cfg.max_patches, m), DECODER_POS_STD, dtype),
        "mae.ln.g": np.ones(m, dtype=dtype),
        "mae.ln.b": np.zeros(m, dtype=dtype),
    }
    for i in range(DECODER_DEPTH):
        init_block(params, rng, f"mae.dec{i}", m, cfg.ff_multiplier, dtype)
    init_linear(params, rng, "mae.out", m, cfg.patch_size, dtype)
    return params


def mae_forward(cfg: TsEncoderConfig, p: dict[str, Tensor], tokens: np.ndarray, roi: np.ndarray, pos: np.ndarray,
                plans: list[MaskPlan]) -> Tensor:
    """Reconstructions for every token, (B, n, P), in the original token order."""
    b, n, _ = tokens.shape
    vis = np.stack([pl.visible for pl in plans])
    msk = np.stack([pl.masked for pl in plans])
    rows = np.arange(b)[:, None]
    states = encode_states(cfg, p, tokens[rows, vis], roi[vis], pos[vis])
    m = cfg.model_dim
    cls_pad = np.zeros((b, 1, m), dtype=tokens.dtype)
    vis_pos = ops.add(ops.embed_lookup(p["mae.roi_embed"], roi[vis]), ops.embed_lookup(p["mae.patch_embed"], pos[vis]))
    dec_vis = ops.add(states, ops.concat([Tensor(cls_pad), vis_pos], axis=1))
    mask_pos = ops.add(ops.embed_lookup(p["mae.roi_embed"], roi[msk]), ops.embed_lookup(p["mae.patch_embed"], pos[msk]))
    dec_mask = ops.add(mask_pos, p["mae.mask_token"])
    x = ops.concat([dec_vis, dec_mask], axis=1)
    for i in range(DECODER_DEPTH):
        x = block(x, p, f"mae.dec{i}", cfg.heads)
    x = ops.layernorm(x, p["mae.ln.g"], p["mae.ln.b"])
    pred = linear(x, p, "mae.out")  # (B, 1 + n, P): cls, visible..., masked...
    order = np.concatenate([vis, msk], axis=1)
    inverse = np.argsort(order, axis=1) + 1
    return ops.apply("slice", pred, index=(rows, inverse))


@dataclass
class EncoderCheckpoint:
    """Pretrained encoder (``ts.*``) and decoder (``mae.*``) weights."""

    config: TsEncoderConfig
    params: dict[str, np.ndarray]
    provenance: dict
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def encoder_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("ts.")}

    def blob(self) -> dict:
        from dataclasses import asdict

        return {"kind": "mae", "ts": asdict(self.config), "provenance": self.provenance}

    def save(self, path: str | Path, history_csv: bool = True) -> Path:
        path = checkpoint.write(path, self.blob(), self.params)
        if history_csv:
            write_history(self.history, path.with_name("pretrain_history.csv"))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EncoderCheckpoint":
        blob, tensors = checkpoint.read(path)
        if blob.get("kind") != "mae":
            raise checkpoint.CheckpointError(f"{path}: not a pretraining checkpoint (kind={blob.get('kind')!r})")
        return cls(TsEncoderConfig(**blob["ts"]), tensors, blob["provenance"])


def write_history(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "masked_mse"])
        for epoch, loss in history:
            w.writerow([epoch, format(loss, ".17g")])


def tokenize_corpus(corpus: Cohort, cfg: TsEncoderConfig, length: int = DEFAULT_LENGTH, dtype=np.float32):
    seqs = [prepare(s.series, length, cfg.patch_size)[0] for s in corpus.subjects]
    tokens = np.stack([s.tokens for s in seqs]).astype(dtype)
    return tokens, seqs[0].roi_index, seqs[0].patch_index


def mae_pretrain(corpus: Cohort, cfg: TsEncoderConfig, epochs: int = DEFAULT_EPOCHS, seed: int = 0,
                 mask_ratio: float = DEFAULT_MASK_RATIO, batch_size: int = DEFAULT_BATCH, lr: float = 1e-3,
                 length: int = DEFAULT_LENGTH) -> EncoderCheckpoint:
    """Train encoder + decoder to reconstruct masked patches; history[0] is the untrained loss."""
    if len(corpus) == 0:
        raise ValueError("pretraining corpus is empty")
    cfg.validate()
    tokens, roi, pos = tokenize_corpus(corpus, cfg, length)
    n_sub, n_tok, _ = tokens.shape
    params = init_ts_params(cfg, np.random.default_rng([int(seed), 1]))
    params.update(init_decoder_params(cfg, np.random.default_rng([int(seed), 4])))
    state = AdamState(lr=lr)

    def plans_for(idx, epoch):
        return [plan_mask(n_tok, mask_ratio, [int(seed), epoch, int(i)]) for i in idx]

    def batches(epoch):
        order = np.random.default_rng([int(seed), 7, epoch]).permutation(n_sub)
        return [order[i : i + batch_size] for i in range(0, n_sub, batch_size)]

    history = []
    with no_grad():
        p = {k: Tensor(v) for k, v in params.items()}
        total = 0.0
        for idx in batches(0):
            pl = plans_for(idx, 0)
            pred = mae_forward(cfg, p, tokens[idx], roi, pos, pl)
            total += reconstruction_loss(pred, tokens[idx], pl).item() * len(idx)
        history.append((0, total / n_sub))
    log.info("pretrain epoch 0 masked mse %.5f", history[0][1])

    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in batches(epoch):
            pl = plans_for(idx, epoch)
            leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
            with Graph() as g:
                loss = reconstruction_loss(mae_forward(cfg, leaves, tokens[idx], roi, pos, pl), tokens[idx], pl)
            value = loss.item()
            if not np.isfinite(value):
                raise PretrainDivergence(f"non-finite reconstruction loss at epoch {epoch}")
            params, state = adam_step(state, params, backward(g, loss))
            total += value * len(idx)
        history.append((epoch, total / n_sub))
        log.info("pretrain epoch %d masked mse %.5f", epoch, history[-1][1])

    provenance = {
        "pretrained": True,
        "seed": int(seed),
        "epochs": int(epochs),
        "mask_ratio": float(mask_ratio),
        "batch_size": int(batch_size),
        "lr": float(lr),
        "corpus_fingerprint": corpus.fingerprint,
        "corpus_size": int(n_sub),
    }
    return EncoderCheckpoint(cfg, params, provenance, history)
