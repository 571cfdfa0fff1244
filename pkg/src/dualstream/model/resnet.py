"""ResNet-18-topology encoder for connectivity matrices treated as 1-channel images.

Group normalization replaces batch normalization so outputs do not depend on
batch composition.
"""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor
from ..numerics import ops
from .config import FcEncoderConfig
from .init import kaiming_uniform


class NotSquareError(ValueError):
    pass


def _conv_init(params, rng, name, cin, cout, k, dtype):
    params[name] = kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype, gain=math.sqrt(2.0))


def _norm_init(params, name, c, dtype, zero=False):
    params[name + ".g"] = (np.zeros if zero else np.ones)(c, dtype=dtype)
    params[name + ".b"] = np.zeros(c, dtype=dtype)


def stage_plan(cfg: FcEncoderConfig) -> list[tuple[str, int, int, int]]:
    """(block name, in channels, out channels, stride) for every residual block."""
    plan = []
    cin = cfg.widths[0]
    for s, cout in enumerate(cfg.widths):
        for b in range(cfg.blocks_per_stage):
            stride = 2 if (s > 0 and b == 0) else 1
            plan.append((f"fc.stage{s}.block{b}", cin, cout, stride))
            cin = cout
    return plan


def init_fc_params(cfg: FcEncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    w0 = cfg.widths[0]
    _conv_init(params, rng, "fc.stem.conv", 1, w0, 3, dtype)
    _norm_init(params, "fc.stem.norm", w0, dtype)
    for name, cin, cout, stride in stage_plan(cfg):
        _conv_init(params, rng, name + ".conv1", cin, cout, 3, dtype)
        _norm_init(params, name + ".norm1", cout, dtype)
        _conv_init(params, rng, name + ".conv2", cout, cout, 3, dtype)
        _norm_init(params, name + ".norm2", cout, dtype, zero=True)
        if stride != 1 or cin != cout:
            _conv_init(params, rng, name + ".down.conv", cin, cout, 1, dtype)
            _norm_init(params, name + ".down.norm", cout, dtype)
    c = cfg.widths[-1]
    bound = math.sqrt(3.0 / c)
    params["fc.proj.w"] = rng.uniform(-bound, bound, (c, cfg.output_dim)).astype(dtype)
    params["fc.proj.b"] = np.zeros(cfg.output_dim, dtype=dtype)
    return params


def _gn(x, p, name, groups):
    c = x.shape[1]
    return ops.groupnorm(x, p[name + ".g"], p[name + ".b"], groups=min(groups, c))


def fc_encode(cfg: FcEncoderConfig, p: dict[str, Tensor], matrices) -> Tensor:
    """R_C for a batch of N x N matrices, (B, M)."""
    shape = matrices.shape
    if len(shape) != 3 or shape[1] != shape[2]:
        raise NotSquareError(f"connectivity input must be (B, N, N), got {tuple(shape)}")
    b, n, _ = shape
    x = ops.reshape(matrices, (b, 1, n, n))
    g = cfg.norm_groups
    x = ops.relu(_gn(ops.conv2d(x, p["fc.stem.conv"], stride=1, padding=1), p, "fc.stem.norm", g))
    for name, cin, cout, stride in stage_plan(cfg):
        h = ops.conv2d(x, p[name + ".conv1"], stride=stride, padding=1)
        h = ops.relu(_gn(h, p, name + ".norm1", g))
        h = _gn(ops.conv2d(h, p[name + ".conv2"], stride=1, padding=1), p, name + ".norm2", g)
        if name + ".down.conv" in p:
            sc = _gn(ops.conv2d(x, p[name + ".down.conv"], stride=stride, padding=0), p, name + ".down.norm", g)
        else:
            sc = x
        x = ops.relu(ops.add(h, sc))
    side = x.shape[2]
    pooled = ops.reshape(ops.avgpool2d(x, kernel=side, stride=side), (b, x.shape[1]))
    return ops.add(ops.matmul(pooled, p["fc.proj.w"]), p["fc.proj.b"])
