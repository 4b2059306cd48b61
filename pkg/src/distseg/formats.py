"""JSON interchange: COCO-style ground truth, sample sets and flat predictions.

Sample-set file::

    [{"image_id": 1, "width": 64, "height": 64,
      "mode": [instance, ...],                  # optional
      "samples": [[instance, ...], ...]}, ...]

Prediction file::

    [{"image_id": 1, "category_id": 1, "score": 0.9, "segmentation": rle}, ...]

where ``instance = {"category_id", "score", "segmentation"}`` and ``rle`` is a
COCO segmentation object ``{"size": [h, w], "counts": [...]}``.  Compressed
(string) counts are accepted everywhere on input; output is always
uncompressed.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .masks import BinaryMask, MalformedMaskError, encode, union_all
from .model import (
    GroundTruthImage,
    Hypothesis,
    Instance,
    SampleSet,
    ValidationError,
    validate,
    validate_ground_truth,
)

log = logging.getLogger(__name__)

__all__ = [
    "SchemaError",
    "CocoData",
    "rasterize_polygon",
    "read_coco",
    "load_ground_truth",
    "load_samples",
    "load_predictions",
    "align_predictions",
    "write_json",
    "ground_truth_to_json",
    "samples_to_json",
    "instance_to_json",
]


class SchemaError(ValueError):
    """A file that parses but does not follow the expected layout."""

    def __init__(self, problems: Sequence[str], path: str | Path | None = None):
        self.problems = list(problems)
        head = f"{path}: " if path else ""
        super().__init__(head + "; ".join(self.problems))


def _read_json(path) -> Any:
    path = Path(path)
    with path.open() as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError([f"malformed JSON: {exc}"], path) from exc


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")


# polygons ------------------------------------------------------------------------


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    return orient(p1, p2, q1) * orient(p1, p2, q2) < 0 and orient(q1, q2, p1) * orient(q1, q2, p2) < 0


def _self_intersects(xs, ys) -> bool:
    pts = list(zip(xs, ys))
    n = len(pts)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return True
    return False


def rasterize_polygon(coords: Sequence[float], height: int, width: int) -> np.ndarray:
    """Even-odd fill sampled at pixel centres ``(col + 0.5, row + 0.5)``.

    ``coords`` is the flat COCO list ``[x0, y0, x1, y1, ...]``.
    """
    if len(coords) < 6 or len(coords) % 2:
        raise MalformedMaskError(f"polygon needs at least 3 (x, y) points, got {len(coords)} numbers")
    xs = np.asarray(coords[0::2], dtype=np.float64)
    ys = np.asarray(coords[1::2], dtype=np.float64)
    if _self_intersects(xs.tolist(), ys.tolist()):
        warnings.warn("self-intersecting polygon rasterized with the even-odd rule", stacklevel=2)
    grid = np.zeros((height, width), dtype=bool)
    r0 = max(int(np.floor(ys.min() - 0.5)), 0)
    r1 = min(int(np.ceil(ys.max() - 0.5)), height - 1)
    c0 = max(int(np.floor(xs.min() - 0.5)), 0)
    c1 = min(int(np.ceil(xs.max() - 0.5)), width - 1)
    if r1 < r0 or c1 < c0:
        return grid
    py, px = np.mgrid[r0 : r1 + 1, c0 : c1 + 1].astype(np.float64) + 0.5
    inside = np.zeros(py.shape, dtype=bool)
    x2, y2 = np.roll(xs, -1), np.roll(ys, -1)
    for xa, ya, xb, yb in zip(xs, ys, x2, y2):
        if ya == yb:
            continue
        spans = (ya > py) != (yb > py)
        x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= spans & (px < x_cross)
    grid[r0 : r1 + 1, c0 : c1 + 1] = inside
    return grid


def _segmentation_mask(seg, height: int, width: int) -> BinaryMask:
    if isinstance(seg, dict):
        mask = BinaryMask.from_rle(seg)
        if mask.shape != (height, width):
            raise MalformedMaskError(f"RLE size {list(mask.shape)} differs from image size {[height, width]}")
        return mask
    if isinstance(seg, list) and seg and all(isinstance(p, (list, tuple)) for p in seg):
        parts = [encode(rasterize_polygon(p, height, width)) for p in seg]
        return union_all(parts)
    if isinstance(seg, list) and seg and all(isinstance(v, (int, float)) for v in seg):
        return encode(rasterize_polygon(seg, height, width))
    raise MalformedMaskError("segmentation must be an RLE object or a list of polygons")


# ground truth ---------------------------------------------------------------------


@dataclass
class CocoData:
    images: list[GroundTruthImage]
    categories: dict[int, str] = field(default_factory=dict)

    def by_id(self) -> dict:
        return {img.image_id: img for img in self.images}


def read_coco(path) -> CocoData:
    """Load a COCO annotation file (``images``, ``annotations``, ``categories``)."""
    doc = _read_json(path)
    problems = []
    if not isinstance(doc, dict):
        raise SchemaError(["top level must be an object with images/annotations/categories"], path)
    for key in ("images", "annotations"):
        if not isinstance(doc.get(key), list):
            problems.append(f"missing or non-list '{key}'")
    if problems:
        raise SchemaError(problems, path)
    categories = {}
    for n, c in enumerate(doc.get("categories") or []):
        try:
            categories[int(c["id"])] = str(c.get("name", c["id"]))
        except (KeyError, TypeError, ValueError):
            problems.append(f"categories[{n}]: needs an integer 'id'")
    dims: dict[Any, tuple[int, int]] = {}
    for n, img in enumerate(doc["images"]):
        try:
            dims[img["id"]] = (int(img["height"]), int(img["width"]))
        except (KeyError, TypeError, ValueError):
            problems.append(f"images[{n}]: needs 'id', 'height' and 'width'")
    instances: dict[Any, list[Instance]] = {i: [] for i in dims}
    for n, ann in enumerate(doc["annotations"]):
        ann_id = ann.get("id", n) if isinstance(ann, dict) else n
        try:
            image_id = ann["image_id"]
            category = int(ann["category_id"])
            seg = ann["segmentation"]
        except (KeyError, TypeError, ValueError):
            problems.append(f"annotation {ann_id}: needs image_id, category_id and segmentation")
            continue
        if image_id not in dims:
            problems.append(f"annotation {ann_id}: unknown image_id {image_id!r}")
            continue
        if ann.get("iscrowd"):
            log.warning("annotation %s is a crowd region; crowd regions are not evaluated, skipping", ann_id)
            continue
        try:
            mask = _segmentation_mask(seg, *dims[image_id])
        except MalformedMaskError as exc:
            problems.append(f"annotation {ann_id}: malformed mask: {exc}")
            continue
        instances[image_id].append(Instance(mask, category, 1.0))
    if problems:
        raise SchemaError(problems, path)
    images = [GroundTruthImage(i, w, h, tuple(instances[i])) for i, (h, w) in dims.items()]
    return CocoData(images, categories)


def load_ground_truth(path) -> list[GroundTruthImage]:
    """Ground-truth images from a COCO file, validated against its category table."""
    data = read_coco(path)
    cats = set(data.categories) or None
    violations = [v for img in data.images for v in validate_ground_truth(img, cats)]
    if violations:
        raise ValidationError(violations, str(path))
    return data.images


def ground_truth_to_json(images: Sequence[GroundTruthImage], categories: dict[int, str] | None = None) -> dict:
    if categories is None:
        ids = sorted({inst.category for img in images for inst in img.instances} or {1})
        categories = {c: f"category_{c}" for c in ids}
    anns = []
    for img in images:
        for inst in img.instances:
            anns.append(
                {
                    "id": len(anns) + 1,
                    "image_id": img.image_id,
                    "category_id": inst.category,
                    "segmentation": inst.mask.to_rle(),
                    "area": inst.mask.area,
                    "iscrowd": 0,
                }
            )
    return {
        "images": [{"id": img.image_id, "width": img.width, "height": img.height} for img in images],
        "annotations": anns,
        "categories": [{"id": c, "name": n} for c, n in sorted(categories.items())],
    }


# instances, samples and predictions ------------------------------------------------


def instance_to_json(inst: Instance, **extra) -> dict:
    out = {"category_id": inst.category, "score": inst.score, "segmentation": inst.mask.to_rle()}
    out.update(extra)
    return out


def _instance_from_json(obj, where: str, problems: list[str], height=None, width=None) -> Instance | None:
    if not isinstance(obj, dict):
        problems.append(f"{where}: instance must be an object")
        return None
    missing = [k for k in ("category_id", "score", "segmentation") if k not in obj]
    if missing:
        problems.append(f"{where}: missing {', '.join(missing)}")
        return None
    try:
        seg = obj["segmentation"]
        if isinstance(seg, dict) or height is None:
            mask = BinaryMask.from_rle(seg)
        else:
            mask = _segmentation_mask(seg, height, width)
        return Instance(mask, int(obj["category_id"]), float(obj["score"]))
    except (MalformedMaskError, TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def load_samples(path) -> list[SampleSet]:
    """Parse and validate a sample-set file."""
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise SchemaError(["top level must be a list of sample-set records"], path)
    problems: list[str] = []
    out = []
    for r, rec in enumerate(doc):
        where = f"record {r}"
        if not isinstance(rec, dict):
            problems.append(f"{where}: must be an object")
            continue
        missing = [k for k in ("image_id", "width", "height", "samples") if k not in rec]
        if missing:
            problems.append(f"{where}: missing {', '.join(missing)}")
            continue
        if not isinstance(rec["samples"], list) or not all(isinstance(s, list) for s in rec["samples"]):
            problems.append(f"{where}: 'samples' must be a list of instance lists")
            continue
        h, w = rec["height"], rec["width"]
        samples = []
        for g, hyp in enumerate(rec["samples"]):
            insts = [_instance_from_json(o, f"{where} sample {g} instance {i}", problems, h, w) for i, o in enumerate(hyp)]
            samples.append(Hypothesis(tuple(i for i in insts if i is not None)))
        mode = None
        if rec.get("mode") is not None:
            if not isinstance(rec["mode"], list):
                problems.append(f"{where}: 'mode' must be an instance list")
            else:
                insts = [_instance_from_json(o, f"{where} mode instance {i}", problems, h, w) for i, o in enumerate(rec["mode"])]
                mode = Hypothesis(tuple(i for i in insts if i is not None))
        out.append(SampleSet(rec["image_id"], int(w), int(h), tuple(samples), mode))
    if problems:
        raise SchemaError(problems, path)
    violations = []
    for r, ss in enumerate(out):
        violations += [f"record {r}: {v}" for v in validate(ss)]
    if violations:
        raise ValidationError(violations, str(path))
    return out


def samples_to_json(sample_sets: Iterable[SampleSet]) -> list[dict]:
    out = []
    for ss in sample_sets:
        rec = {"image_id": ss.image_id, "width": ss.width, "height": ss.height}
        if ss.mode is not None:
            rec["mode"] = [instance_to_json(i) for i in ss.mode.instances]
        rec["samples"] = [[instance_to_json(i) for i in hyp.instances] for hyp in ss.samples]
        out.append(rec)
    return out


def load_predictions(path) -> list[tuple[Any, Instance, dict]]:
    """Flat prediction records as ``(image_id, instance, extra_fields)``."""
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise SchemaError(["top level must be a list of predictions"], path)
    problems: list[str] = []
    out = []
    for n, rec in enumerate(doc):
        if not isinstance(rec, dict) or "image_id" not in rec:
            problems.append(f"prediction {n}: needs an image_id")
            continue
        inst = _instance_from_json(rec, f"prediction {n}", problems)
        if inst is not None:
            extra = {k: v for k, v in rec.items() if k not in ("image_id", "category_id", "score", "segmentation")}
            out.append((rec["image_id"], inst, extra))
    if problems:
        raise SchemaError(problems, path)
    return out


def align_predictions(records, images: Sequence[GroundTruthImage]) -> list[list[Instance]]:
    """Group flat predictions by image, in ground-truth image order."""
    index = {img.image_id: n for n, img in enumerate(images)}
    out: list[list[Instance]] = [[] for _ in images]
    violations = []
    for n, (image_id, inst, _) in enumerate(records):
        if image_id not in index:
            violations.append(f"prediction {n}: image_id {image_id!r} not in ground truth")
            continue
        img = images[index[image_id]]
        if inst.mask.shape != (img.height, img.width):
            violations.append(
                f"prediction {n}: mask is {inst.mask.height}x{inst.mask.width}, image is {img.height}x{img.width}"
            )
            continue
        if not 0.0 <= inst.score <= 1.0:
            violations.append(f"prediction {n}: score {inst.score!r} outside [0, 1]")
        if inst.mask.area == 0:
            violations.append(f"prediction {n}: empty mask")
        out[index[image_id]].append(inst)
    if violations:
        raise ValidationError(violations, "predictions")
    return out
