"""Feature extraction and shallow probes (ridge, k-NN) under stratified folds."""

from __future__ import annotations

import numpy as np

from ..model import DualStreamModel
from ..numerics import no_grad
from .experiment import PreparedCohort
from .folds import FoldSplit, stratified_kfold
from .metrics import MetricsReport, compute_metrics

CLASSIFIERS = ("ridge", "knn")
RIDGE_LAMBDA = 1.0
KNN_K = 5


def extract_features(model: DualStreamModel, data: PreparedCohort, ids=None, chunk: int = 16) -> np.ndarray:
    """Head inputs (R_TC for fused models), one row per subject, f64."""
    rows_all = np.arange(len(data)) if ids is None else data.index(ids)
    out = []
    with no_grad():
        for i in range(0, rows_all.size, chunk):
            out.append(model.features(data.batch(rows_all[i : i + chunk])))
    return np.concatenate(out).astype(np.float64)


def raw_features(data: PreparedCohort, kind: str = "fc") -> np.ndarray:
    """Flattened X_C (``fc``) or X_T (``ts``)."""
    if kind == "fc":
        return data.fc.reshape(len(data), -1).astype(np.float64)
    if kind == "ts":
        return data.tokens.reshape(len(data), -1).astype(np.float64)
    raise ValueError(f"raw feature kind must be 'fc' or 'ts', got {kind!r}")


def pca_features(x: np.ndarray, c: int | None = None) -> np.ndarray:
    """Scores on the top-c principal axes; c defaults to min(10, n - 1), capped by the width."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    c = min(10, n - 1, x.shape[1]) if c is None else c
    if not 1 <= c <= min(n, x.shape[1]):
        raise ValueError(f"cannot keep {c} components from {x.shape}")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:c]
    # sign convention: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(c), np.abs(comps).argmax(axis=1)])
    return xc @ (comps * flip[:, None]).T


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA) -> tuple[np.ndarray, float]:
    """Least squares on +-1 targets with an unpenalized intercept."""
    t = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    mu = x.mean(axis=0)
    xc = x - mu
    n, d = xc.shape
    if d <= n:
        w = np.linalg.solve(xc.T @ xc + lam * np.eye(d), xc.T @ (t - t.mean()))
    else:  # dual form
        w = xc.T @ np.linalg.solve(xc @ xc.T + lam * np.eye(n), t - t.mean())
    return w, float(t.mean() - mu @ w)


def ridge_scores(x_train, y_train, x_test, lam: float = RIDGE_LAMBDA) -> np.ndarray:
    w, b = ridge_fit(np.asarray(x_train, np.float64), y_train, lam)
    return np.asarray(x_test, np.float64) @ w + b


def knn_scores(x_train, y_train, x_test, k: int = KNN_K) -> np.ndarray:
    """Fraction of positive labels among the k nearest training rows.

    Equal distances are resolved in favour of the lower training index.
    """
    xt = np.asarray(x_train, np.float64)
    xq = np.asarray(x_test, np.float64)
    y = np.asarray(y_train, np.int64)
    if not 1 <= k <= xt.shape[0]:
        raise ValueError(f"k={k} needs between 1 and {xt.shape[0]} training rows")
    d2 = ((xq[:, None, :] - xt[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return y[nearest].mean(axis=1)


def probe_probabilities(classifier: str, x_train, y_train, x_test) -> np.ndarray:
    """Scores mapped so that 0.5 is the decision boundary."""
    if classifier == "ridge":
        s = ridge_scores(x_train, y_train, x_test)
        return 1.0 / (1.0 + np.exp(-s))
    if classifier == "knn":
        return knn_scores(x_train, y_train, x_test)
    raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {classifier!r}")


def _check(features, labels, k):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"features {x.shape} do not match {y.size} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    if y.size < 2 * k:
        raise ValueError(f"need at least {2 * k} subjects for a {k}-fold probe, got {y.size}")
    return x, y


def linear_probe(features, labels, classifier: str = "ridge", k: int = 5, seed: int = 0, ids=None,
                 name: str | None = None) -> MetricsReport:
    """Fixed features, fresh classifier per fold."""
    x, y = _check(features, labels, k)
    ids = [str(i) for i in range(y.size)] if ids is None else list(ids)
    split = stratified_kfold(y, k, seed, ids)
    pos = {s: i for i, s in enumerate(ids)}
    entries = []
    for f in range(k):
        te = np.array([pos[s] for s in split.test_ids(f)])
        tr = np.array([pos[s] for s in split.train_ids(f)])
        m = compute_metrics(probe_probabilities(classifier, x[tr], y[tr], x[te]), y[te])
        m["fold"] = f
        entries.append(m)
    return MetricsReport(name or f"probe/{classifier}", "fold", entries, {"classifier": classifier, "seed": int(seed)})


def fold_feature_probe(models: list[DualStreamModel], data: PreparedCohort, split: FoldSplit, classifier: str = "ridge",
                       name: str | None = None) -> MetricsReport:
    """Probe learned features: fold f's model embeds its own train and held-out subjects."""
    if len(models) != split.k:
        raise ValueError(f"{len(models)} models for {split.k} folds")
    entries = []
    for f, model in enumerate(models):
        tr, te = split.train_ids(f), split.test_ids(f)
        x_tr, x_te = extract_features(model, data, tr), extract_features(model, data, te)
        m = compute_metrics(probe_probabilities(classifier, x_tr, data.labels[data.index(tr)], x_te),
                            data.labels[data.index(te)])
        m["fold"] = f
        entries.append(m)
    return MetricsReport(name or f"probe/{classifier}/learned", "fold", entries, {"classifier": classifier})
