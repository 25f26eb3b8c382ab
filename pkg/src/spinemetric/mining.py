"""Seeded construction of training tuples and stratified dataset splits.

Everything here is a pure function of (labels, parameters, seed): two calls
with the same arguments return identical results. Randomness comes from
``numpy.random.default_rng`` seeded with explicit integer sequences so that
folds and epochs can be reproduced independently of call order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class GradeLabel(IntEnum):
    """Fracture severity class: healthy, moderate, severe."""

    G0 = 0
    G2 = 2
    G3 = 3


class RegionLabel(IntEnum):
    """Spine region groups ordered cranio-caudally."""

    T1_T5 = 0
    T6_T9 = 1
    T10_T12 = 2
    L1_L4 = 3
    L5 = 4


GRADES = (GradeLabel.G0, GradeLabel.G2, GradeLabel.G3)
REGIONS = tuple(RegionLabel)


@dataclass(frozen=True)
class Quadruplet:
    """Index tuple (g0, g2, g3, anchor); anchor_class names the anchor's grade."""

    idx_g0: int
    idx_g2: int
    idx_g3: int
    idx_anchor: int
    anchor_class: int

    def static_index(self) -> int:
        return {0: self.idx_g0, 2: self.idx_g2, 3: self.idx_g3}[self.anchor_class]


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int


def _grade_indices(labels):
    labels = [GradeLabel(l) for l in labels]
    by_grade = {g: [] for g in GRADES}
    for i, l in enumerate(labels):
        by_grade[l].append(i)
    return by_grade


def make_folds(labels, n_folds: int, test_fraction: float, seed: int) -> list[FoldSplit]:
    """Draw ``n_folds`` independent stratified train/test splits.

    Each fold is reproducible from (seed, fold_id) alone. Per grade, the
    test set receives round(count * test_fraction) samples, which keeps
    every grade's test share within one sample of the global proportion.
    """
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must lie in (0, 1)")
    by_grade = _grade_indices(labels)
    for g, idxs in by_grade.items():
        if not idxs:
            raise ValueError(f"grade {g.name} has no samples")
        n_test = int(np.floor(len(idxs) * test_fraction + 0.5))
        if n_test == 0 or n_test == len(idxs):
            raise ValueError(
                f"test_fraction {test_fraction} leaves grade {g.name} empty "
                f"in test or train"
            )

    folds = []
    for fold_id in range(n_folds):
        rng = np.random.default_rng([seed, fold_id])
        train, test = [], []
        for g in GRADES:
            idxs = np.array(by_grade[g])
            n_test = int(np.floor(len(idxs) * test_fraction + 0.5))
            perm = rng.permutation(len(idxs))
            test.extend(idxs[perm[:n_test]].tolist())
            train.extend(idxs[perm[n_test:]].tolist())
        folds.append(
            FoldSplit(
                fold_id=fold_id,
                train_ids=tuple(sorted(train)),
                test_ids=tuple(sorted(test)),
                seed=seed,
            )
        )
    return folds


def folds_to_json(folds) -> str:
    doc = {
        "seed": folds[0].seed if folds else None,
        "folds": [
            {
                "fold_id": f.fold_id,
                "train_ids": list(f.train_ids),
                "test_ids": list(f.test_ids),
            }
            for f in folds
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def folds_from_json(text: str) -> list[FoldSplit]:
    doc = json.loads(text)
    return [
        FoldSplit(
            fold_id=f["fold_id"],
            train_ids=tuple(f["train_ids"]),
            test_ids=tuple(f["test_ids"]),
            seed=doc["seed"],
        )
        for f in doc["folds"]
    ]


def mine_quadruplets(labels, count: int, seed: int) -> list[Quadruplet]:
    """Sample ``count`` quadruplets: one static member per grade plus an anchor.

    Static slots are drawn uniformly within their grade. The anchor class is
    drawn uniformly from {0, 2, 3}, then the anchor uniformly from that grade
    excluding the static slot (no self-pairing).
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    by_grade = _grade_indices(labels)
    for g, idxs in by_grade.items():
        if not idxs:
            raise ValueError(f"grade {g.name} has no samples")
    if max(len(v) for v in by_grade.values()) < 2:
        raise ValueError("need at least one grade with >= 2 samples for anchors")

    pools = {int(g): np.array(by_grade[g]) for g in GRADES}
    rng = np.random.default_rng([seed])
    out = []
    for _ in range(count):
        i0 = int(pools[0][rng.integers(len(pools[0]))])
        i2 = int(pools[2][rng.integers(len(pools[2]))])
        i3 = int(pools[3][rng.integers(len(pools[3]))])
        n = int(rng.choice([0, 2, 3]))
        pool = pools[n]
        static = {0: i0, 2: i2, 3: i3}[n]
        if len(pool) < 2:
            raise ValueError(
                f"anchor class {n} has a single sample occupying the static slot"
            )
        anchor = static
        while anchor == static:
            anchor = int(pool[rng.integers(len(pool))])
        out.append(Quadruplet(i0, i2, i3, anchor, n))
    return out


def mine_triplets(labels, count: int, seed: int) -> list[tuple[int, int, int]]:
    """Sample (anchor, positive, negative) index triplets from class labels."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    labels = list(labels)
    by_class: dict = {}
    for i, l in enumerate(labels):
        by_class.setdefault(l, []).append(i)
    rich = sorted(k for k, v in by_class.items() if len(v) >= 2)
    if not rich:
        raise ValueError("no class has >= 2 samples; no positive pair exists")
    if len(by_class) < 2:
        raise ValueError("need at least two classes for negatives")

    rng = np.random.default_rng([seed])
    out = []
    for _ in range(count):
        c = rich[int(rng.integers(len(rich)))]
        pool = by_class[c]
        a_pos = rng.choice(len(pool), size=2, replace=False)
        anchor, positive = int(pool[a_pos[0]]), int(pool[a_pos[1]])
        neg_pool = [i for i, l in enumerate(labels) if l != c]
        negative = int(neg_pool[rng.integers(len(neg_pool))])
        out.append((anchor, positive, negative))
    return out


def mine_pairs(labels, count: int, similar_fraction: float, seed: int):
    """Sample ``count`` (i, j, similar) pairs with an exact similar share.

    Exactly round(count * similar_fraction) pairs share a class; the rest
    cross classes. Pair order is shuffled deterministically.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if not (0.0 <= similar_fraction <= 1.0):
        raise ValueError("similar_fraction must lie in [0, 1]")
    labels = list(labels)
    by_class: dict = {}
    for i, l in enumerate(labels):
        by_class.setdefault(l, []).append(i)
    rich = sorted(k for k, v in by_class.items() if len(v) >= 2)
    if not rich:
        raise ValueError("no class has >= 2 samples; no similar pair exists")
    if len(by_class) < 2:
        raise ValueError("need at least two classes for dissimilar pairs")

    rng = np.random.default_rng([seed])
    n_similar = int(np.floor(count * similar_fraction + 0.5))
    pairs = []
    for _ in range(n_similar):
        c = rich[int(rng.integers(len(rich)))]
        pool = by_class[c]
        ij = rng.choice(len(pool), size=2, replace=False)
        pairs.append((int(pool[ij[0]]), int(pool[ij[1]]), True))
    for _ in range(count - n_similar):
        i = int(rng.integers(len(labels)))
        other = [j for j, l in enumerate(labels) if l != labels[i]]
        j = int(other[rng.integers(len(other))])
        pairs.append((i, j, False))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]
