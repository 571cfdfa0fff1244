"""Fusion of the two modality features R_T, R_C into R_TC."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor
from ..numerics import ops
from .config import FUSIONS
from .transformer import init_linear, linear


def init_fusion_params(kind: str, dim: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    if kind in ("cross_uni", "cross_bi"):
        dirs = ["t2c"] if kind == "cross_uni" else ["t2c", "c2t"]
        for d in dirs:
            for proj in ("q", "k", "v", "o"):
                init_linear(params, rng, f"fuse.{d}.{proj}", dim, dim, dtype)
    elif kind == "moe":
        init_linear(params, rng, "fuse.gate", 2 * dim, 2, dtype)
        for e in range(2):
            init_linear(params, rng, f"fuse.expert{e}", 2 * dim, dim, dtype)
    return params


def _cross(query: Tensor, context: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    """One-token attention: ``query`` attends to the single ``context`` token."""
    b, m = query.shape
    q = ops.reshape(linear(query, p, name + ".q"), (b, 1, m))
    k = ops.reshape(linear(context, p, name + ".k"), (b, 1, m))
    v = ops.reshape(linear(context, p, name + ".v"), (b, 1, m))
    w = ops.softmax(ops.mul(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(m)), axis=-1)
    out = ops.reshape(ops.matmul(w, v), (b, m))
    return ops.add(query, linear(out, p, name + ".o"))


def moe_gate(rt: Tensor, rc: Tensor, p: dict[str, Tensor]) -> Tensor:
    return ops.softmax(linear(ops.concat([rt, rc], axis=1), p, "fuse.gate"), axis=-1)


def fuse(rt: Tensor, rc: Tensor, kind: str, p: dict[str, Tensor] | None = None) -> Tensor:
    if kind not in FUSIONS:
        raise ValueError(f"unknown fusion {kind!r}; choose from {FUSIONS}")
    if rt.shape != rc.shape:
        raise ValueError(f"fusion inputs differ in shape: R_T {rt.shape} vs R_C {rc.shape}")
    p = p or {}
    if kind == "concat":
        return ops.concat([rt, rc], axis=-1)
    if kind == "sum":
        return ops.add(rt, rc)
    if kind == "cross_uni":
        return _cross(rt, rc, p, "fuse.t2c")
    if kind == "cross_bi":
        return ops.add(_cross(rt, rc, p, "fuse.t2c"), _cross(rc, rt, p, "fuse.c2t"))
    joint = ops.concat([rt, rc], axis=1)
    gate = moe_gate(rt, rc, p)
    b = rt.shape[0]
    out = None
    for e in range(2):
        g = ops.slice(gate, (slice(None), slice(e, e + 1)))
        term = ops.mul(linear(joint, p, f"fuse.expert{e}"), ops.reshape(g, (b, 1)))
        out = term if out is None else ops.add(out, term)
    return out
