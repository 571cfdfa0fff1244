from __future__ import annotations

import numpy as np

from .metrics import MetricsReport, compute_metrics


def random_baseline(labels, repeats: int = 1000, seed: int = 0) -> MetricsReport:
    """Fair-coin guessing; each repeat scores its hard 0/1 guesses as probabilities."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([int(seed), 0xC01])
    entries = []
    for r in range(repeats):
        guess = rng.integers(0, 2, size=y.size).astype(np.float64)
        m = compute_metrics(guess, y)
        m["repeat"] = r
        entries.append(m)
    return MetricsReport("random", "repeat", entries, {"repeats": repeats, "seed": int(seed), "n_subjects": int(y.size)})
