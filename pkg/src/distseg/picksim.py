"""Monte-Carlo double-pick rate and pickable-area fraction.

A gripper footprint is a disc of pixels.  A probe is *valid* when its disc
lies entirely inside exactly one predicted mask (and inside the image); a
valid probe is a *double pick* when its disc shares at least one pixel with
two or more ground-truth masks.

Probe centres come from a counter-based SplitMix64 stream: probe ``i`` under
seed ``s`` uses ``z = mix64(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``;
its row is ``((z >> 32) * H) >> 32`` and its column is
``((z & 0xFFFFFFFF) * W) >> 32``.  ``mix64`` is the SplitMix64 finaliser::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with all arithmetic modulo 2**64.  Any implementation following these lines
reproduces the probe centres exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, encode

__all__ = [
    "PickSimConfig",
    "PickSimResult",
    "splitmix64",
    "probe_centers",
    "disc_pixels",
    "estimate_double_pick",
    "estimate_dataset",
    "pickable_area_fraction",
]

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class PickSimConfig:
    radius: float = 8
    n_probes: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"gripper radius must be at least 1 pixel, got {self.radius}")
        if self.n_probes < 1:
            raise ValueError(f"n_probes must be at least 1, got {self.n_probes}")


@dataclass(frozen=True)
class PickSimResult:
    rate: float | None
    D: int
    N: int
    stderr: float | None

    @property
    def defined(self) -> bool:
        return self.N > 0

    def to_json(self) -> dict:
        return {"rate": self.rate, "D": self.D, "N": self.N, "stderr": self.stderr}


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of the SplitMix64 stream for ``seed``."""
    with np.errstate(over="ignore"):
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        z = np.uint64(seed % 2**64) + idx * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def probe_centers(seed: int, n: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of the first ``n`` probes; uniform over the pixel grid."""
    z = splitmix64(seed, n)
    lo_mask = np.uint64(0xFFFFFFFF)
    shift = np.uint64(32)
    with np.errstate(over="ignore"):
        rows = ((z >> shift) * np.uint64(height)) >> shift
        cols = ((z & lo_mask) * np.uint64(width)) >> shift
    return rows.astype(np.int64), cols.astype(np.int64)


def _masks(items) -> list[BinaryMask]:
    return [x if isinstance(x, BinaryMask) else x.mask for x in items]


def _disc_offsets(radius: float) -> tuple[np.ndarray, int]:
    reach = int(math.floor(radius))
    dr, dc = np.mgrid[-reach : reach + 1, -reach : reach + 1]
    return (dr * dr + dc * dc) <= radius * radius, reach


def disc_pixels(center: tuple[int, int], radius: float, height: int, width: int) -> BinaryMask | None:
    """Pixels within ``radius`` of ``center``; None when the disc leaves the grid."""
    if radius < 1:
        raise ValueError("radius must be at least 1")
    r0, c0 = center
    footprint, reach = _disc_offsets(radius)
    if r0 - reach < 0 or c0 - reach < 0 or r0 + reach >= height or c0 + reach >= width:
        return None
    grid = np.zeros((height, width), dtype=bool)
    grid[r0 - reach : r0 + reach + 1, c0 - reach : c0 + reach + 1] = footprint
    return encode(grid)


def _centre_counts(masks: Sequence[BinaryMask], footprint: np.ndarray, reach: int, mode: str, shape) -> np.ndarray:
    """Per-pixel count of masks that contain (erode) or touch (dilate) the disc there."""
    height, width = shape
    counts = np.zeros(shape, dtype=np.int32)
    for m in masks:
        bb = m.bbox
        if bb is None:
            continue
        pad = reach if mode == "dilate" else 0
        r0, c0 = max(bb[0] - pad, 0), max(bb[1] - pad, 0)
        r1, c1 = min(bb[2] + pad, height - 1), min(bb[3] + pad, width - 1)
        # raster of the (padded) bounding box only
        lengths = m.ends - m.starts
        flat = np.repeat(m.starts - np.cumsum(lengths) + lengths, lengths) + np.arange(m.area)
        local = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
        local[flat % height - r0, flat // height - c0] = True
        if mode == "erode":
            hit = ndimage.binary_erosion(local, structure=footprint, border_value=0)
        else:
            hit = ndimage.binary_dilation(local, structure=footprint, border_value=0)
        counts[r0 : r1 + 1, c0 : c1 + 1] += hit
    return counts


def estimate_double_pick(
    predictions: Sequence,
    ground_truths: Sequence,
    config: PickSimConfig = PickSimConfig(),
) -> PickSimResult:
    """Estimate the double-pick rate ``D / N`` for one image."""
    pred_masks = _masks(predictions)
    gt_masks = _masks(ground_truths)
    masks = pred_masks + gt_masks
    if not masks:
        return PickSimResult(None, 0, 0, None)
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise ValueError("all masks must share the image dimensions")
    D, N = _count_probes(pred_masks, gt_masks, config, shape)
    return _result(D, N)


def _count_probes(pred_masks, gt_masks, config: PickSimConfig, shape) -> tuple[int, int]:
    height, width = shape
    footprint, reach = _disc_offsets(config.radius)
    rows, cols = probe_centers(config.seed, config.n_probes, height, width)
    inside = (rows >= reach) & (cols >= reach) & (rows + reach < height) & (cols + reach < width)
    rows, cols = rows[inside], cols[inside]
    held = _centre_counts(pred_masks, footprint, reach, "erode", shape)[rows, cols]
    touched = _centre_counts(gt_masks, footprint, reach, "dilate", shape)[rows, cols]
    valid = held == 1
    return int((valid & (touched >= 2)).sum()), int(valid.sum())


def _result(D: int, N: int) -> PickSimResult:
    if N == 0:
        return PickSimResult(None, D, N, None)
    rate = D / N
    return PickSimResult(rate, D, N, math.sqrt(rate * (1 - rate) / N))


def estimate_dataset(predictions, ground_truths, config: PickSimConfig = PickSimConfig()) -> PickSimResult:
    """Pool probes over images; image ``j`` uses SplitMix64 output ``j`` of the seed as its own seed."""
    if len(predictions) != len(ground_truths):
        raise ValueError("predictions and ground truth must cover the same images")
    image_seeds = splitmix64(config.seed, len(predictions)).tolist()
    D = N = 0
    for preds, gt, s in zip(predictions, ground_truths, image_seeds):
        pred_masks = _masks(preds)
        gt_masks = _masks(gt.instances if hasattr(gt, "instances") else gt)
        if not pred_masks and not gt_masks:
            continue
        shape = (pred_masks + gt_masks)[0].shape
        d, n = _count_probes(pred_masks, gt_masks, PickSimConfig(config.radius, config.n_probes, s), shape)
        D += d
        N += n
    return _result(D, N)


def pickable_area_fraction(predictions: Sequence, ground_truths: Sequence) -> float:
    """Total predicted mask area over total ground-truth mask area."""
    pred = sum(m.area for m in _masks(predictions))
    gt = sum(m.area for m in _masks(ground_truths))
    if gt == 0:
        raise ZeroDivisionError("pickable area fraction needs ground truth with positive area")
    return pred / gt
