"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from distseg.masks import BinaryMask, encode
from distseg.model import Hypothesis, Instance, SampleSet


def rect(h: int, w: int, r0: int, c0: int, r1: int, c1: int) -> BinaryMask:
    """Inclusive rectangle rows r0..r1, cols c0..c1."""
    grid = np.zeros((h, w), dtype=bool)
    grid[r0 : r1 + 1, c0 : c1 + 1] = True
    return encode(grid)


def random_grid(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    kind = rng.integers(4)
    if kind == 0:
        return rng.random((h, w)) < rng.random()
    if kind == 1:
        grid = np.zeros((h, w), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            r0, r1 = sorted(rng.integers(0, h, 2))
            c0, c1 = sorted(rng.integers(0, w, 2))
            grid[r0 : r1 + 1, c0 : c1 + 1] = True
        return grid
    if kind == 2:
        return np.zeros((h, w), dtype=bool)
    return rng.random((h, w)) < 0.97


def sample_set(samples, height=10, width=10, image_id=1, mode=None) -> SampleSet:
    """Build a sample set from nested lists of masks or (mask, score[, category])."""
    hyps = []
    for s in samples:
        insts = []
        for x in s:
            if isinstance(x, BinaryMask):
                insts.append(Instance(x, 1, 1.0))
            elif len(x) == 2:
                insts.append(Instance(x[0], 1, x[1]))
            else:
                insts.append(Instance(x[0], x[2], x[1]))
        hyps.append(Hypothesis(tuple(insts)))
    return SampleSet(image_id, width, height, tuple(hyps), mode)
