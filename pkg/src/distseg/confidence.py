"""p-confidence masks: greedy intersection of agreeing sampled masks.

A confidence mask is the intersection of one mask from each of at least
``ceil(k * p)`` distinct samples, so it lies inside every mask it was built
from and is therefore contained in a sampled instance for at least a ``p``
fraction of the ``k`` samples.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .masks import BinaryMask, exact, intersect_all, intersection_area, iou, subtract
from .model import SampleSet, ValidationError, validate

__all__ = [
    "ConfidenceParams",
    "ConfidenceMask",
    "required_support",
    "candidate",
    "score_confidence_mask",
    "extract",
]

Origin = tuple[int, int]


@dataclass(frozen=True)
class ConfidenceParams:
    p: float
    score_floor: float = 0.1
    max_outputs: int | None = None

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"confidence requirement p must lie in (0, 1], got {self.p}")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValueError(f"score_floor must lie in [0, 1], got {self.score_floor}")
        if self.max_outputs is not None and self.max_outputs < 0:
            raise ValueError("max_outputs must be non-negative")


@dataclass(frozen=True)
class ConfidenceMask:
    mask: BinaryMask
    score: float
    support: tuple[Origin, ...]
    p: float
    category: int = 1


def required_support(k: int, p: float) -> int:
    """Smallest support size ``n`` with ``n / k >= p``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return max(1, math.ceil(k * exact(p)))


def candidate(
    anchor: Origin,
    sample_set: SampleSet,
    claimed: BinaryMask | None,
    p: float,
) -> tuple[BinaryMask, tuple[Origin, ...]] | None:
    """Best intersection seeded by one sampled mask, or None.

    Every other sample contributes its single mask with the largest unclaimed
    overlap with the anchor; the anchor plus the ``ceil(k*p) - 1`` strongest of
    those form the support.
    """
    g0, h0 = anchor
    samples = sample_set.samples
    need = required_support(len(samples), p)
    anchor_mask = samples[g0].instances[h0].mask
    free = subtract(anchor_mask, claimed) if claimed is not None else anchor_mask
    if not free:
        return None
    picks = []
    for g, hyp in enumerate(samples):
        if g == g0:
            continue
        best_h, best_v = -1, 0
        for h, inst in enumerate(hyp.instances):
            v = intersection_area(free, inst.mask)
            if v > best_v:
                best_h, best_v = h, v
        if best_h >= 0:
            picks.append((best_v, g, best_h))
    if len(picks) < need - 1:
        return None
    picks.sort(key=lambda t: (-t[0], t[1]))
    support = (anchor,) + tuple((g, h) for _, g, h in picks[: need - 1])
    mask = intersect_all(samples[g].instances[h].mask for g, h in support)
    if claimed is not None:
        mask = subtract(mask, claimed)
    if not mask:
        return None
    return mask, support


def score_confidence_mask(mask: BinaryMask, support: Sequence[tuple[BinaryMask, float]]) -> float:
    """Mean score-weighted IoU between ``mask`` and each supporting mask."""
    if not support:
        raise ValueError("confidence mask score needs a non-empty support")
    if not mask:
        raise ValueError("confidence mask score needs a non-empty mask")
    return math.fsum(score * iou(mask, m) for m, score in support) / len(support)


def _modal_category(categories: Sequence[int]) -> int:
    tally = Counter(categories)
    top = max(tally.values())
    return min(c for c, n in tally.items() if n == top)


class _Engine:
    """Candidate evaluation over de-duplicated masks.

    Sampled hypotheses repeat heavily, so overlaps and intersections are
    computed once per distinct mask and shared by every anchor using it.
    """

    def __init__(self, sample_set: SampleSet, p: float):
        self.samples = sample_set.samples
        self.k = len(self.samples)
        self.need = required_support(self.k, p)
        self.uniques: list[BinaryMask] = []
        index: dict[BinaryMask, int] = {}
        nmax = max((len(h) for h in self.samples), default=0)
        self.uid = np.full((self.k, max(nmax, 1)), -1, dtype=np.int64)
        self.scores = np.zeros((self.k, max(nmax, 1)), dtype=np.float64)
        self.anchors: list[tuple[int, int, int]] = []
        for g, hyp in enumerate(self.samples):
            for h, inst in enumerate(hyp.instances):
                u = index.get(inst.mask)
                if u is None:
                    u = index[inst.mask] = len(self.uniques)
                    self.uniques.append(inst.mask)
                self.uid[g, h] = u
                self.scores[g, h] = inst.score
                self.anchors.append((g, h, u))
        self.valid = self.uid >= 0

    def best(self, claimed: BinaryMask | None):
        """Highest-scoring candidate this round as ``(score, g, h, mask, support)``."""
        if claimed is None:
            free = self.uniques
        else:
            free = [subtract(m, claimed) for m in self.uniques]
        n = len(free)
        free_area = np.array([m.area for m in free], dtype=np.int64)
        overlap = np.zeros((n, n), dtype=np.int64)
        for a in range(n):
            if free_area[a] == 0:
                continue
            overlap[a, a] = free_area[a]
            for b in range(a + 1, n):
                if free_area[b]:
                    overlap[a, b] = overlap[b, a] = intersection_area(free[a], free[b])

        rows = np.arange(self.k)
        per_uid = {}
        cache: dict[frozenset, tuple[BinaryMask, np.ndarray] | None] = {}
        best = None
        need = self.need
        for g, h, a in self.anchors:
            if free_area[a] == 0:
                continue
            if a not in per_uid:
                vals = np.where(self.valid, overlap[a][self.uid], -1)
                best_h = vals.argmax(axis=1)
                best_v = vals[rows, best_h]
                order = np.lexsort((rows, -best_v))
                per_uid[a] = (best_h, order[best_v[order] > 0])
            best_h, positive = per_uid[a]
            top = positive[:need]
            if (top == g).any():
                others = top[top != g]
            else:
                others = top[: need - 1]
            if others.size < need - 1:
                continue
            other_h = best_h[others]
            sup_uid = np.concatenate(([a], self.uid[others, other_h]))
            key = frozenset(sup_uid.tolist())
            if key not in cache:
                mask = intersect_all(free[u] for u in sorted(key))
                if not mask:
                    cache[key] = None
                else:
                    ratios = np.zeros(n)
                    for u in key:
                        ratios[u] = iou(mask, self.uniques[u])
                    cache[key] = (mask, ratios)
            hit = cache[key]
            if hit is None:
                continue
            mask, ratios = hit
            sup_scores = np.concatenate(([self.scores[g, h]], self.scores[others, other_h]))
            score = math.fsum((sup_scores * ratios[sup_uid]).tolist()) / need
            if best is None or score > best[0]:
                support = ((g, h),) + tuple(zip(others.tolist(), other_h.tolist()))
                best = (score, g, h, mask, support)
        return best


def extract(sample_set: SampleSet, params: ConfidenceParams | float) -> list[ConfidenceMask]:
    """Greedily emit disjoint confidence masks in descending score order."""
    if not isinstance(params, ConfidenceParams):
        params = ConfidenceParams(p=params)
    violations = validate(sample_set)
    if violations:
        raise ValidationError(violations, f"sample set {sample_set.image_id!r}")
    engine = _Engine(sample_set, params.p)
    claimed: BinaryMask | None = None
    out: list[tuple[float, int, int, ConfidenceMask]] = []
    while params.max_outputs is None or len(out) < params.max_outputs:
        best = engine.best(claimed)
        if best is None or best[0] <= params.score_floor:
            break
        score, g, h, mask, support = best
        category = _modal_category([sample_set.samples[sg].instances[sh].category for sg, sh in support])
        out.append((score, g, h, ConfidenceMask(mask, score, support, params.p, category)))
        claimed = mask if claimed is None else claimed | mask
    out.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [t[3] for t in out]
