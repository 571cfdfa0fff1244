"""Turn ROI time series into the two model inputs: patch tokens and FC matrices."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_LENGTH = 200
DEFAULT_PATCH = 20


class ParcellationError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    """Row-major (roi, patch) tokens of a length-fitted series."""

    tokens: np.ndarray  # (n_rois * n_patches, patch)
    roi_index: np.ndarray
    patch_index: np.ndarray
    n_rois: int
    n_patches: int

    @property
    def patch_size(self) -> int:
        return self.tokens.shape[1]

    def __len__(self) -> int:
        return self.tokens.shape[0]


def check_series(series: np.ndarray) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"ROI time series must be N x t with N, t >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("ROI time series contains non-finite values")
    return x


def read_atlas_labels(path: str | Path) -> np.ndarray:
    """One integer ROI id per line."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return np.array([int(ln) for ln in lines if ln], dtype=np.int64)


def parcellate(voxel_series: np.ndarray, atlas_labels: np.ndarray, n_rois: int | None = None) -> np.ndarray:
    """Average voxel time series within each atlas ROI (ids 1..N)."""
    v = np.asarray(voxel_series, dtype=np.float64)
    labels = np.asarray(atlas_labels, dtype=np.int64)
    if v.ndim != 2 or labels.shape != (v.shape[0],):
        raise ParcellationError(f"need V x t series and V labels, got {v.shape} and {labels.shape}")
    n = int(labels.max()) if n_rois is None else n_rois
    bad = labels[(labels < 1) | (labels > n)]
    if bad.size:
        raise ParcellationError(f"labels out of range [1, {n}]: {sorted(set(bad.tolist()))}")
    counts = np.bincount(labels - 1, minlength=n)
    missing = (np.flatnonzero(counts == 0) + 1).tolist()
    if missing:
        raise ParcellationError(f"empty ROIs (no voxels): {missing}")
    sums = np.zeros((n, v.shape[1]))
    np.add.at(sums, labels - 1, v)
    return sums / counts[:, None]


def _row_std(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    sd = np.sqrt((centered**2).mean(axis=1, keepdims=True))
    scale = np.maximum(np.abs(x).max(axis=1, keepdims=True), 1.0)
    flat = sd <= 1e-12 * scale
    return centered, sd, flat


def standardize(series: np.ndarray) -> np.ndarray:
    """Per-ROI z-score with population std; constant rows become zeros."""
    x = np.asarray(series, dtype=np.float64)
    centered, sd, flat = _row_std(x)
    out = np.divide(centered, sd, out=np.zeros_like(centered), where=~flat)
    out[flat[:, 0]] = 0.0
    return out


def fit_length(series: np.ndarray, length: int = DEFAULT_LENGTH) -> np.ndarray:
    """Keep the first ``length`` columns or right-pad with zeros."""
    x = np.asarray(series)
    t = x.shape[1]
    if t >= length:
        return x[:, :length].copy()
    return np.concatenate([x, np.zeros((x.shape[0], length - t), dtype=x.dtype)], axis=1)


def patchify(series: np.ndarray, patch: int = DEFAULT_PATCH) -> TokenSequence:
    x = np.asarray(series)
    n, t = x.shape
    if t % patch:
        raise ValueError(f"patch size {patch} does not divide series length {t}")
    k = t // patch
    tokens = x.reshape(n, k, patch).reshape(n * k, patch)
    roi = np.repeat(np.arange(n), k)
    pos = np.tile(np.arange(k), n)
    return TokenSequence(tokens.copy(), roi, pos, n, k)


def unpatchify(seq: TokenSequence) -> np.ndarray:
    return seq.tokens.reshape(seq.n_rois, seq.n_patches * seq.patch_size)


def compute_fc(series: np.ndarray) -> np.ndarray:
    """Pearson correlation between ROI rows.

    Zero-variance rows correlate 0 with everything, including themselves.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"need N x t with t >= 2, got {x.shape}")
    centered, sd, flat = _row_std(x)
    z = np.divide(centered, sd, out=np.zeros_like(centered), where=~flat)
    z[flat[:, 0]] = 0.0
    c = z @ z.T / x.shape[1]
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    live = ~flat[:, 0]
    np.fill_diagonal(c, live.astype(np.float64))
    return c


def prepare(series: np.ndarray, length: int = DEFAULT_LENGTH, patch: int = DEFAULT_PATCH) -> tuple[TokenSequence, np.ndarray]:
    """standardize -> fit_length -> (patchify, compute_fc); both views share one series."""
    fitted = fit_length(standardize(check_series(series)), length)
    return patchify(fitted, patch), compute_fc(fitted)
