"""Pre-norm transformer over ROI/patch tokens with a learned class token."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor
from ..numerics import ops
from .config import TsEncoderConfig
from .init import kaiming_uniform, normal


class TokenOverflowError(ValueError):
    pass


def linear(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    return ops.add(ops.matmul(x, p[name + ".w"]), p[name + ".b"])


def init_linear(params: dict, rng: np.random.Generator, name: str, fan_in: int, fan_out: int, dtype) -> None:
    params[name + ".w"] = kaiming_uniform(rng, (fan_in, fan_out), fan_in, dtype)
    params[name + ".b"] = np.zeros(fan_out, dtype=dtype)


def init_block(params: dict, rng: np.random.Generator, name: str, dim: int, ff_mult: int, dtype) -> None:
    for ln in ("ln1", "ln2"):
        params[f"{name}.{ln}.g"] = np.ones(dim, dtype=dtype)
        params[f"{name}.{ln}.b"] = np.zeros(dim, dtype=dtype)
    for proj in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.attn.{proj}", dim, dim, dtype)
    init_linear(params, rng, f"{name}.ff1", dim, ff_mult * dim, dtype)
    init_linear(params, rng, f"{name}.ff2", ff_mult * dim, dim, dtype)


def init_ts_params(cfg: TsEncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    m = cfg.model_dim
    params: dict[str, np.ndarray] = {}
    init_linear(params, rng, "ts.embed", cfg.patch_size, m, dtype)
    params["ts.roi_embed"] = normal(rng, (cfg.max_rois, m), 0.02, dtype)
    params["ts.patch_embed"] = normal(rng, (cfg.max_patches, m), 0.02, dtype)
    params["ts.cls"] = normal(rng, (m,), 0.02, dtype)
    for i in range(cfg.layers):
        init_block(params, rng, f"ts.layer{i}", m, cfg.ff_multiplier, dtype)
    params["ts.ln_f.g"] = np.ones(m, dtype=dtype)
    params["ts.ln_f.b"] = np.zeros(m, dtype=dtype)
    return params


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, m = x.shape
    return ops.transpose(ops.reshape(x, (b, n, heads, m // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, h * d))


def _segment_means(n: int, m: int, dtype) -> np.ndarray:
    """(m, n) averaging matrix over contiguous token segments."""
    a = np.zeros((m, n), dtype=dtype)
    for i, seg in enumerate(np.array_split(np.arange(n), m)):
        a[i, seg] = 1.0 / len(seg)
    return a


def _iterative_pinv(a: Tensor, iters: int = 12) -> Tensor:
    """Newton-Schulz style pseudo-inverse of softmax kernels (rows sum to 1).

    The initial scaling is a data-dependent constant and is not differentiated.
    """
    data = a.data
    norm = float(np.abs(data).sum(axis=-1).max() * np.abs(data).sum(axis=-2).max())
    z = ops.mul(ops.transpose(a, (0, 1, 3, 2)), 1.0 / norm)
    eye = np.eye(data.shape[-1], dtype=data.dtype)
    for _ in range(iters):
        az = ops.matmul(a, z)
        inner = ops.sub(7 * eye, az)
        inner = ops.sub(15 * eye, ops.matmul(az, inner))
        inner = ops.sub(13 * eye, ops.matmul(az, inner))
        z = ops.mul(ops.matmul(z, inner), 0.25)
    return z


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    q = ops.mul(q, 1.0 / math.sqrt(q.shape[-1]))
    return ops.softmax(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), axis=-1)


def self_attention(x: Tensor, p: dict[str, Tensor], name: str, heads: int, kind: str = "exact", landmarks: int = 32) -> Tensor:
    q = _split_heads(linear(x, p, name + ".q"), heads)
    k = _split_heads(linear(x, p, name + ".k"), heads)
    v = _split_heads(linear(x, p, name + ".v"), heads)
    n = x.shape[1]
    if kind == "nystrom" and landmarks < n:
        avg = _segment_means(n, landmarks, x.dtype)
        q_l = ops.matmul(avg, q)
        k_l = ops.matmul(avg, k)
        f = attention_weights(q, k_l)
        mid = _iterative_pinv(attention_weights(q_l, k_l))
        b = attention_weights(q_l, k)
        out = ops.matmul(ops.matmul(f, mid), ops.matmul(b, v))
    else:
        out = ops.matmul(attention_weights(q, k), v)
    return linear(_merge_heads(out), p, name + ".o")


def block(x: Tensor, p: dict[str, Tensor], name: str, heads: int, kind: str = "exact", landmarks: int = 32) -> Tensor:
    h = ops.layernorm(x, p[name + ".ln1.g"], p[name + ".ln1.b"])
    x = ops.add(x, self_attention(h, p, name + ".attn", heads, kind, landmarks))
    h = ops.layernorm(x, p[name + ".ln2.g"], p[name + ".ln2.b"])
    h = linear(ops.gelu(linear(h, p, name + ".ff1")), p, name + ".ff2")
    return ops.add(x, h)


def embed_tokens(cfg: TsEncoderConfig, p: dict[str, Tensor], tokens, roi_index, patch_index) -> Tensor:
    """Linear patch embedding plus ROI and patch-position embeddings: (B, n, M)."""
    roi_index = np.asarray(roi_index)
    patch_index = np.asarray(patch_index)
    n = tokens.shape[1]
    if n > cfg.max_tokens or roi_index.max() >= cfg.max_rois or patch_index.max() >= cfg.max_patches:
        raise TokenOverflowError(
            f"{n} tokens over {roi_index.max() + 1} ROIs x {patch_index.max() + 1} patches exceed "
            f"the encoder limit of {cfg.max_rois} x {cfg.max_patches}"
        )
    if tokens.shape[-1] != cfg.patch_size:
        raise ValueError(f"token length {tokens.shape[-1]} != patch size {cfg.patch_size}")
    x = linear(tokens, p, "ts.embed")
    x = ops.add(x, ops.embed_lookup(p["ts.roi_embed"], roi_index))
    return ops.add(x, ops.embed_lookup(p["ts.patch_embed"], patch_index))


def encode_states(cfg: TsEncoderConfig, p: dict[str, Tensor], tokens, roi_index, patch_index) -> Tensor:
    """Final hidden states (B, 1 + n, M); position 0 is the class token."""
    x = embed_tokens(cfg, p, tokens, roi_index, patch_index)
    b = x.shape[0]
    cls = ops.add(np.zeros((b, 1, cfg.model_dim), dtype=x.dtype), p["ts.cls"])
    x = ops.concat([cls, x], axis=1)
    for i in range(cfg.layers):
        x = block(x, p, f"ts.layer{i}", cfg.heads, cfg.attention, cfg.landmarks)
    return ops.layernorm(x, p["ts.ln_f.g"], p["ts.ln_f.b"])


def ts_encode(cfg: TsEncoderConfig, p: dict[str, Tensor], tokens, roi_index, patch_index) -> Tensor:
    """R_T: final class-token state, (B, M)."""
    states = encode_states(cfg, p, tokens, roi_index, patch_index)
    return ops.reshape(ops.slice(states, (slice(None), slice(0, 1), slice(None))), (states.shape[0], cfg.model_dim))
