"""Central finite differences, the oracle for :func:`backward`."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[dict[str, np.ndarray]], float], params: dict[str, np.ndarray], name: str, h: float = 1e-5) -> np.ndarray:
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    x = base[name]
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = f(base)
        x[i] = orig - h
        fm = f(base)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error, guarded against two near-zero vectors."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(np.ravel(a))), float(np.linalg.norm(np.ravel(b))), 1e-12)
    return num / den
