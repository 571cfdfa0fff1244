"""Integrated-gradients attribution over the fused feature that feeds the head."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import canonical
from .model import DualStreamModel
from .numerics import Graph, Tensor, backward
from .numerics import ops

DEFAULT_STEPS = 50

Predictor = Callable[[Tensor], Tensor]


@dataclass
class AttributionReport:
    values: np.ndarray  # (D,)
    ts_share: float
    fc_share: float
    residual: float
    steps: int
    prediction: float
    baseline_prediction: float
    baseline: dict = field(default_factory=lambda: {"kind": "zero"})

    def to_dict(self) -> dict:
        return {
            "values": self.values,
            "ts_share": self.ts_share,
            "fc_share": self.fc_share,
            "completeness_residual": self.residual,
            "steps": self.steps,
            "prediction": self.prediction,
            "baseline_prediction": self.baseline_prediction,
            "baseline": self.baseline,
        }


def head_predictor(model: DualStreamModel) -> Predictor:
    """sigmoid(w . x + b) with the model's head weights promoted to f64."""
    w = model.params["head.w"].astype(np.float64)
    b = model.params["head.b"].astype(np.float64)

    def predict(x: Tensor) -> Tensor:
        z = ops.add(ops.matmul(x, w), b)
        return ops.sigmoid(ops.reshape(z, z.shape[:-1]))

    return predict


def _evaluate(predictor: Predictor, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outputs and per-row input gradients for a batch of points."""
    leaf = Tensor(points, requires_grad=True, name="ig.x")
    with Graph() as g:
        out = predictor(leaf)
        total = ops.sum(out)
    grads = backward(g, total).get("ig.x", np.zeros_like(points))
    values = out.data.astype(np.float64).reshape(points.shape[0])
    return values, grads.astype(np.float64)


def _halves(values: np.ndarray, dim: int | None) -> tuple[float, float]:
    d = values.size
    m = d // 2 if dim is None else dim
    if 2 * m != d:
        return float("nan"), float("nan")
    a = np.abs(values)
    return float(a[:m].mean()), float(a[m:].mean())


def integrated_gradients(predictor: Predictor, x, baseline=None, steps: int = DEFAULT_STEPS, dim: int | None = None,
                         chunk: int = 1024) -> AttributionReport:
    """Midpoint-rule path integral from ``baseline`` (default zeros) to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"x must be a 1-D feature vector, got shape {x.shape}")
    base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if base.shape != x.shape:
        raise ValueError(f"baseline length {base.size} != input length {x.size}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    delta = x - base
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    grad_sum = np.zeros_like(x)
    for i in range(0, steps, chunk):
        a = alphas[i : i + chunk]
        _, grads = _evaluate(predictor, base[None, :] + a[:, None] * delta[None, :])
        if not np.all(np.isfinite(grads)):
            raise FloatingPointError("non-finite gradient along the integration path")
        grad_sum += grads.sum(axis=0)
    values = delta * grad_sum / steps
    ends, _ = _evaluate(predictor, np.stack([x, base]))
    residual = abs(float(values.sum()) - float(ends[0] - ends[1]))
    ts, fc = _halves(values, dim)
    desc = {"kind": "zero"} if baseline is None else {"kind": "given", "norm": float(np.linalg.norm(base))}
    return AttributionReport(values, ts, fc, residual, steps, float(ends[0]), float(ends[1]), desc)


def modality_importance(reports: list[AttributionReport], dim: int) -> dict:
    """Mean |IG| over the TS block [0, M) and the FC block [M, 2M), averaged over subjects."""
    if not reports:
        raise ValueError("no attribution reports given")
    for r in reports:
        if r.values.size != 2 * dim:
            raise ValueError(f"attribution length {r.values.size} != 2M = {2 * dim}")
    profile = np.mean([np.abs(r.values) for r in reports], axis=0)
    ts = float(profile[:dim].mean())
    fc = float(profile[dim:].mean())
    return {
        "ts_share": ts,
        "fc_share": fc,
        "ts_fraction": ts / (ts + fc) if ts + fc > 0 else float("nan"),
        "profile": profile,
        "max_residual": float(max(r.residual for r in reports)),
        "n_subjects": len(reports),
    }


def attribute_cohort(model: DualStreamModel, features: np.ndarray, ids: list[str], steps: int = DEFAULT_STEPS) -> dict:
    """IG for every subject's fused feature row plus the cohort-level modality shares."""
    if model.config.modality != "both" or model.config.fusion != "concat":
        raise ValueError("modality attribution needs a concat-fused two-stream model")
    pred = head_predictor(model)
    m = model.config.feature_dim
    reports = [integrated_gradients(pred, row, steps=steps, dim=m) for row in np.asarray(features, dtype=np.float64)]
    summary = modality_importance(reports, m)
    summary["subjects"] = {sid: r.to_dict() for sid, r in zip(ids, reports)}
    summary["steps"] = steps
    summary["baseline"] = {"kind": "zero"}
    return summary


def write_attribution(summary: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "attribution.json"
    path.write_text(canonical.dumps(summary, indent=1) + "\n")
    profile = np.asarray(summary["profile"])
    m = profile.size // 2
    with open(out / "attribution_profile.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "modality", "mean_abs_ig"])
        for i, v in enumerate(profile):
            w.writerow([i, "ts" if i < m else "fc", format(float(v), ".17g")])
    return path
