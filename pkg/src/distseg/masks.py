"""Run-length-encoded binary masks with exact set algebra.

Masks follow the COCO uncompressed RLE convention: pixels are enumerated in
column-major order and ``counts`` alternates zero-runs and one-runs, starting
with a zero-run.  Internally a mask keeps the one-runs as two sorted arrays of
half-open ``[start, end)`` flat indices, and every set operation works on
those arrays directly.  No operation in this module builds a full raster
except :func:`decode` / :meth:`BinaryMask.to_array`.
"""

from __future__ import annotations

from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BinaryMask",
    "DimensionError",
    "MalformedMaskError",
    "UndefinedOverlapError",
    "encode",
    "decode",
    "area",
    "intersect",
    "union_of",
    "subtract",
    "contains",
    "intersection_area",
    "intersection_areas",
    "iou",
    "iop",
    "iog",
    "intersect_all",
    "union_all",
    "decode_compressed_counts",
    "encode_compressed_counts",
    "exact",
]


class DimensionError(ValueError):
    pass


class MalformedMaskError(ValueError):
    pass


class UndefinedOverlapError(ZeroDivisionError):
    """An overlap ratio whose denominator is zero."""


def exact(x) -> Fraction:
    """Exact rational for a threshold; floats map to their shortest decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x))


_EMPTY = np.zeros(0, dtype=np.int64)
_EMPTY.flags.writeable = False


def _frozen(a) -> np.ndarray:
    if isinstance(a, np.ndarray) and a.dtype == np.int64 and not a.flags.writeable:
        return a
    arr = np.array(a, dtype=np.int64)
    arr.flags.writeable = False
    return arr


class BinaryMask:
    """Immutable binary pixel set on a ``height x width`` grid."""

    __slots__ = ("height", "width", "starts", "ends", "__dict__")

    def __init__(self, height: int, width: int, starts=_EMPTY, ends=_EMPTY):
        if height <= 0 or width <= 0:
            raise DimensionError(f"mask dimensions must be positive, got {height}x{width}")
        self.height = int(height)
        self.width = int(width)
        self.starts = _frozen(starts)
        self.ends = _frozen(ends)

    # construction ---------------------------------------------------------

    @classmethod
    def empty(cls, height: int, width: int) -> BinaryMask:
        return cls(height, width)

    @classmethod
    def full(cls, height: int, width: int) -> BinaryMask:
        return cls(height, width, [0], [height * width])

    @classmethod
    def from_counts(cls, height: int, width: int, counts: Sequence[int]) -> BinaryMask:
        """Build a mask from uncompressed RLE counts.

        Interior zero counts are tolerated and merged away, so the stored form
        is always canonical.
        """
        if height <= 0 or width <= 0:
            raise DimensionError(f"mask dimensions must be positive, got {height}x{width}")
        c = np.asarray(list(counts), dtype=np.int64)
        if c.size and c.min() < 0:
            raise MalformedMaskError("negative run length in counts")
        total = int(c.sum()) if c.size else 0
        if total != height * width:
            raise MalformedMaskError(
                f"counts sum to {total}, expected {height}*{width}={height * width}"
            )
        bounds = np.concatenate(([0], np.cumsum(c)))
        starts = bounds[1:-1:2]
        ends = bounds[2::2]
        keep = ends > starts
        starts, ends = starts[keep], ends[keep]
        if starts.size > 1:
            # drop boundaries where a run ends exactly where the next begins
            joined = starts[1:] == ends[:-1]
            if joined.any():
                starts = np.concatenate((starts[:1], starts[1:][~joined]))
                ends = np.concatenate((ends[:-1][~joined], ends[-1:]))
        return cls(height, width, starts, ends)

    @classmethod
    def from_rle(cls, rle: dict) -> BinaryMask:
        """Parse a COCO segmentation RLE object (uncompressed or compressed)."""
        try:
            height, width = (int(v) for v in rle["size"])
            counts = rle["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedMaskError(f"not an RLE object: {exc}") from exc
        if isinstance(counts, bytes):
            counts = counts.decode("ascii")
        if isinstance(counts, str):
            counts = decode_compressed_counts(counts)
        return cls.from_counts(height, width, counts)

    # views ----------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @cached_property
    def counts(self) -> list[int]:
        n = self.n_pixels
        if self.starts.size == 0:
            return [n]
        bounds = np.empty(2 * self.starts.size, dtype=np.int64)
        bounds[0::2] = self.starts
        bounds[1::2] = self.ends
        out = np.diff(np.concatenate(([0], bounds))).tolist()
        if self.ends[-1] < n:
            out.append(n - int(self.ends[-1]))
        return out

    @cached_property
    def area(self) -> int:
        return int((self.ends - self.starts).sum())

    @cached_property
    def _cum(self) -> np.ndarray:
        # pixels covered strictly before run i
        lengths = self.ends - self.starts
        return np.concatenate(([0], np.cumsum(lengths)[:-1])) if lengths.size else _EMPTY

    @cached_property
    def bbox(self) -> tuple[int, int, int, int] | None:
        """Inclusive ``(row0, col0, row1, col1)`` of the set pixels, or None."""
        if self.starts.size == 0:
            return None
        h = self.height
        last = self.ends - 1
        col0 = int(self.starts[0] // h)
        col1 = int(last[-1] // h)
        spans_columns = (self.starts // h) != (last // h)
        if spans_columns.any():
            return (0, col0, h - 1, col1)
        return (int((self.starts % h).min()), col0, int((last % h).max()), col1)

    def to_rle(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    def to_array(self) -> np.ndarray:
        flat = np.zeros(self.n_pixels, dtype=bool)
        for s, e in zip(self.starts.tolist(), self.ends.tolist()):
            flat[s:e] = True
        return flat.reshape((self.width, self.height)).T

    def __bool__(self) -> bool:
        return self.starts.size > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.ends, other.ends)
        )

    def __hash__(self) -> int:
        return hash((self.height, self.width, self.starts.tobytes(), self.ends.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, area={self.area}, runs={self.starts.size})"

    def __and__(self, other: BinaryMask) -> BinaryMask:
        return intersect(self, other)

    def __or__(self, other: BinaryMask) -> BinaryMask:
        return union_of(self, other)

    def __sub__(self, other: BinaryMask) -> BinaryMask:
        return subtract(self, other)

    def __reduce__(self):
        return (BinaryMask, (self.height, self.width, np.array(self.starts), np.array(self.ends)))


# raster conversion ----------------------------------------------------------


def encode(grid) -> BinaryMask:
    """Encode an ``H x W`` boolean raster."""
    arr = np.asarray(grid)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"expected a non-empty 2-D grid, got shape {arr.shape}")
    flat = arr.astype(bool).ravel(order="F").astype(np.int8)
    edges = np.diff(np.concatenate(([0], flat, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return BinaryMask(arr.shape[0], arr.shape[1], starts, ends)


def decode(mask: BinaryMask) -> np.ndarray:
    return mask.to_array()


def area(mask: BinaryMask) -> int:
    return mask.area


# run-list set algebra ---------------------------------------------------------


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _membership(mask: BinaryMask, points: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(mask.starts, points, side="right") - 1
    inside = idx >= 0
    inside[inside] = points[inside] < mask.ends[idx[inside]]
    return inside


def _combine(a: BinaryMask, b: BinaryMask, op) -> BinaryMask:
    _check_dims(a, b)
    bps = np.unique(np.concatenate((a.starts, a.ends, b.starts, b.ends)))
    if bps.size < 2:
        return BinaryMask(a.height, a.width)
    seg = bps[:-1]
    on = op(_membership(a, seg), _membership(b, seg))
    if not on.any():
        return BinaryMask(a.height, a.width)
    padded = np.concatenate(([False], on, [False]))
    rise = np.flatnonzero(padded[1:-1] & ~padded[:-2])
    fall = np.flatnonzero(padded[1:-1] & ~padded[2:])
    return BinaryMask(a.height, a.width, bps[rise], bps[fall + 1])


def intersect(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if not a or not b:
        _check_dims(a, b)
        return BinaryMask(a.height, a.width)
    return _combine(a, b, np.logical_and)


def union_of(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if not b:
        _check_dims(a, b)
        return a
    if not a:
        _check_dims(a, b)
        return b
    return _combine(a, b, np.logical_or)


def subtract(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if not a or not b:
        _check_dims(a, b)
        return a
    return _combine(a, b, lambda x, y: x & ~y)


def intersect_all(masks: Iterable[BinaryMask]) -> BinaryMask:
    it = iter(masks)
    try:
        out = next(it)
    except StopIteration:
        raise ValueError("intersect_all needs at least one mask") from None
    for m in it:
        out = intersect(out, m)
        if not out:
            _check_dims(out, m)
    return out


def union_all(masks: Iterable[BinaryMask], height: int | None = None, width: int | None = None) -> BinaryMask:
    masks = list(masks)
    if not masks:
        if height is None or width is None:
            raise ValueError("union of no masks needs explicit dimensions")
        return BinaryMask(height, width)
    for m in masks[1:]:
        _check_dims(masks[0], m)
    starts = np.concatenate([m.starts for m in masks])
    ends = np.concatenate([m.ends for m in masks])
    if starts.size == 0:
        return BinaryMask(masks[0].height, masks[0].width)
    order = np.argsort(starts, kind="stable")
    starts, ends = starts[order], ends[order]
    # a run opens a new block when it starts past every earlier end
    reach = np.maximum.accumulate(ends)
    new_block = np.concatenate(([True], starts[1:] > reach[:-1]))
    out_starts = starts[new_block]
    out_ends = np.maximum.reduceat(ends, np.flatnonzero(new_block))
    return BinaryMask(masks[0].height, masks[0].width, out_starts, out_ends)


def _bboxes_disjoint(a: BinaryMask, b: BinaryMask) -> bool:
    ba, bb = a.bbox, b.bbox
    if ba is None or bb is None:
        return True
    return ba[2] < bb[0] or bb[2] < ba[0] or ba[3] < bb[1] or bb[3] < ba[1]


def _covered_before(mask: BinaryMask, points: np.ndarray) -> np.ndarray:
    """Number of set pixels with flat index < each point."""
    idx = np.searchsorted(mask.starts, points, side="right") - 1
    out = np.zeros(points.shape, dtype=np.int64)
    ok = idx >= 0
    i = idx[ok]
    lengths = mask.ends[i] - mask.starts[i]
    out[ok] = mask._cum[i] + np.clip(points[ok] - mask.starts[i], 0, lengths)
    return out


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    """``area(intersect(a, b))`` without building the intersection."""
    _check_dims(a, b)
    if _bboxes_disjoint(a, b):
        return 0
    if a.starts.size < b.starts.size:
        a, b = b, a
    return int((_covered_before(a, b.ends) - _covered_before(a, b.starts)).sum())


def intersection_areas(rows: Sequence[BinaryMask], cols: Sequence[BinaryMask]) -> np.ndarray:
    """Pairwise intersection areas as an integer matrix."""
    out = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            out[i, j] = intersection_area(a, b)
    return out


def contains(outer: BinaryMask, inner: BinaryMask) -> bool:
    _check_dims(outer, inner)
    if not inner:
        return True
    if inner.area > outer.area:
        return False
    return intersection_area(outer, inner) == inner.area


# overlap ratios ------------------------------------------------------------------


def iou(a: BinaryMask, b: BinaryMask) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        raise UndefinedOverlapError("IoU of two empty masks is undefined")
    return inter / union


def iop(pred: BinaryMask, gt: BinaryMask) -> float:
    inter = intersection_area(pred, gt)
    if pred.area == 0:
        raise UndefinedOverlapError("IoP with an empty prediction is undefined")
    return inter / pred.area


def iog(pred: BinaryMask, gt: BinaryMask) -> float:
    inter = intersection_area(pred, gt)
    if gt.area == 0:
        raise UndefinedOverlapError("IoG with an empty ground truth is undefined")
    return inter / gt.area


# compressed COCO counts ------------------------------------------------------------


def decode_compressed_counts(s: str) -> list[int]:
    """Decode COCO's character-packed RLE counts string."""
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise MalformedMaskError("truncated compressed RLE string")
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def encode_compressed_counts(counts: Sequence[int]) -> str:
    out = []
    counts = list(counts)
    for i, x in enumerate(counts):
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)
