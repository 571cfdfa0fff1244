"""Binary classification metrics, reported in percent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

METRICS = ("f1", "bacc", "auroc", "mcc")


def _binary(x, what: str) -> np.ndarray:
    a = np.asarray(x)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{what} must be binary (0/1)")
    return a.astype(np.int64)


def confusion(predicted, labels) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) for binary predictions."""
    p = _binary(predicted, "predictions")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape[0] if p.ndim else 0} predictions vs {y.shape[0] if y.ndim else 0} labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return tp, fp, tn, fn


def mcc_from_counts(tp: int, fp: int, tn: int, fn: int) -> float:
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def macro_f1_from_counts(tp: int, fp: int, tn: int, fn: int) -> float:
    def f1(t, f_pos, f_neg):
        d = 2 * t + f_pos + f_neg
        return 0.0 if d == 0 else 2 * t / d

    # class 0 treats TN as its true positives
    return 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp))


def bacc_from_counts(tp: int, fp: int, tn: int, fn: int) -> float:
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    return float(np.mean(rates)) if rates else 0.0


def auroc(scores, labels) -> float | None:
    """Mann-Whitney statistic with midranks; None when only one class is present."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels, "labels")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def compute_metrics(probabilities, labels, threshold: float = 0.5) -> dict:
    """Single-evaluation metrics in percent plus confusion counts."""
    prob = np.asarray(probabilities, dtype=np.float64)
    y = _binary(labels, "labels")
    if prob.shape != y.shape:
        raise ValueError(f"length mismatch: {prob.shape} probabilities vs {y.shape} labels")
    pred = (prob >= threshold).astype(np.int64)
    tp, fp, tn, fn = confusion(pred, y)
    auc = auroc(prob, y)
    return {
        "f1": 100.0 * macro_f1_from_counts(tp, fp, tn, fn),
        "bacc": 100.0 * bacc_from_counts(tp, fp, tn, fn),
        "auroc": None if auc is None else 100.0 * auc,
        "mcc": 100.0 * mcc_from_counts(tp, fp, tn, fn),
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }


@dataclass
class MetricsReport:
    """Per-unit metrics (one unit = one fold, seed or repeat) and their mean/std."""

    name: str
    unit: str
    entries: list[dict]
    extra: dict = field(default_factory=dict)

    def values(self, metric: str) -> np.ndarray:
        return np.array([e[metric] for e in self.entries if e[metric] is not None], dtype=np.float64)

    def mean(self, metric: str) -> float:
        v = self.values(metric)
        return float(v.mean()) if v.size else float("nan")

    def std(self, metric: str) -> float:
        v = self.values(metric)
        return float(v.std()) if v.size else float("nan")

    def summary(self) -> dict:
        out = {}
        for m in METRICS:
            v = self.values(m)
            out[m] = {"mean": self.mean(m), "std": self.std(m), "n": int(v.size)} if v.size else {"mean": None, "std": None, "n": 0}
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "unit": self.unit, "entries": self.entries, "summary": self.summary(), **self.extra}

    def line(self) -> str:
        parts = []
        for m in METRICS:
            v = self.values(m)
            parts.append(f"{m.upper()} {v.mean():.2f}±{v.std():.2f}" if v.size else f"{m.upper()} n/a")
        return f"{self.name}: " + ", ".join(parts)
