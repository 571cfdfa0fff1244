from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple[str, ...], ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def test_ids(self, i: int) -> list[str]:
        return list(self.folds[i])

    def train_ids(self, i: int) -> list[str]:
        return sorted(x for j, f in enumerate(self.folds) if j != i for x in f)


def stratified_kfold(labels, k: int = 5, seed: int = 0, ids=None) -> FoldSplit:
    """Seeded per-class shuffle followed by round-robin dealing into ``k`` folds.

    Assignment depends on ids (sorted), never on input order.
    """
    y = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if y.size < k:
        raise ValueError(f"cannot split {y.size} subjects into {k} folds")
    ids = [str(i) for i in range(y.size)] if ids is None else [str(i) for i in ids]
    if len(ids) != y.size or len(set(ids)) != y.size:
        raise ValueError("ids must be unique and match labels")
    by_id = sorted(zip(ids, y.tolist()))
    rng = np.random.default_rng([int(seed), 0xF01D])
    folds: list[list[str]] = [[] for _ in range(k)]
    cursor = 0
    for cls in sorted({lab for _, lab in by_id}):
        members = [i for i, lab in by_id if lab == cls]
        for idx in rng.permutation(len(members)):
            folds[cursor % k].append(members[idx])
            cursor += 1
    split = FoldSplit(tuple(tuple(sorted(f)) for f in folds))
    check_split(split, dict(by_id))
    return split


def check_split(split: FoldSplit, labels_by_id: dict[str, int]) -> None:
    """Disjointness, coverage and per-class balance (within 1 of proportional)."""
    seen = [x for f in split.folds for x in f]
    if len(seen) != len(set(seen)):
        raise AssertionError("folds overlap")
    if set(seen) != set(labels_by_id):
        raise AssertionError("folds do not cover the cohort")
    k = split.k
    for cls in set(labels_by_id.values()):
        total = sum(1 for v in labels_by_id.values() if v == cls)
        for f in split.folds:
            count = sum(1 for x in f if labels_by_id[x] == cls)
            if abs(count - total / k) > 1:
                raise AssertionError(f"fold class-{cls} count {count} too far from {total / k:.2f}")
