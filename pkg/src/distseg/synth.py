"""Synthetic ambiguous scenes with an exactly enumerable posterior.

Objects are laid out on a grid of cells.  Two kinds of independent ambiguity
are instantiated:

* merge pairs -- two abutting rectangles that are truly one object with
  probability ``merge_probability``;
* boundary offsets -- an object's outline grows or shrinks by an integer
  number of pixels, drawn from ``boundary_offsets``.

Because the factors are independent, the posterior over complete ground-truth
segmentations is the product lattice of the per-factor choices, and each
component weight is an exact :class:`~fractions.Fraction`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .masks import BinaryMask, DimensionError, contains, exact, encode, union_of
from .model import GroundTruthImage, Hypothesis, Instance, SampleSet

__all__ = [
    "SceneSpec",
    "Scene",
    "SceneTooLargeError",
    "generate_scene",
    "sample_hypotheses",
    "containment_probability",
    "sample_draws",
]

DEFAULT_CAP = 4096


class SceneTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    min_objects: int = 3
    max_objects: int = 6
    merge_probability: float = 0.3
    # adjacent object pairs carrying a merge ambiguity
    merge_pairs: int = 1
    boundary_offsets: Mapping[int, float] = field(default_factory=lambda: {0: 1.0})
    # objects whose outline is uncertain
    ambiguous_boundaries: int = 1
    shapes: str = "mixed"
    n_categories: int = 1
    enumeration_cap: int = DEFAULT_CAP
    seed: int = 0

    def __post_init__(self):
        offsets = {int(k): exact(v) for k, v in dict(self.boundary_offsets).items()}
        object.__setattr__(self, "boundary_offsets", offsets)
        errors = []
        if self.height < 8 or self.width < 8:
            errors.append("grid must be at least 8x8")
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            errors.append("object count range must satisfy 1 <= min <= max")
        if not 0 <= exact(self.merge_probability) <= 1:
            errors.append("merge_probability must lie in [0, 1]")
        if not offsets:
            errors.append("boundary_offsets must not be empty")
        elif any(w < 0 or w > 1 for w in offsets.values()):
            errors.append("boundary offset weights must lie in [0, 1]")
        elif sum(offsets.values()) != 1:
            errors.append(f"boundary offset weights sum to {sum(offsets.values())}, not 1")
        if self.merge_pairs < 0 or self.ambiguous_boundaries < 0:
            errors.append("ambiguity counts must be non-negative")
        if self.shapes not in ("rect", "ellipse", "mixed"):
            errors.append("shapes must be rect, ellipse or mixed")
        if self.n_categories not in (1, 2):
            errors.append("n_categories must be 1 or 2")
        if errors:
            raise ValueError("invalid scene spec: " + "; ".join(errors))

    @classmethod
    def from_dict(cls, d: Mapping) -> SceneSpec:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["boundary_offsets"] = {str(k): str(v) for k, v in self.boundary_offsets.items()}
        return d


@dataclass(frozen=True)
class _Shape:
    kind: str
    # rectangles: inclusive row0, col0, row1, col1; ellipses: centre row/col, radii
    params: tuple[float, ...]

    def raster(self, height: int, width: int, offset: int = 0) -> np.ndarray:
        rr, cc = np.mgrid[0:height, 0:width]
        if self.kind == "rect":
            r0, c0, r1, c1 = self.params
            return (rr >= r0 - offset) & (rr <= r1 + offset) & (cc >= c0 - offset) & (cc <= c1 + offset)
        cr, cc0, ar, ac = self.params
        ar, ac = ar + offset, ac + offset
        return ((rr - cr) / ar) ** 2 + ((cc - cc0) / ac) ** 2 <= 1.0


@dataclass(frozen=True)
class _Unit:
    """A single object or an abutting pair that may be one object."""

    shapes: tuple[_Shape, ...]
    category: int
    merge_factor: int | None = None
    offset_factor: int | None = None


@dataclass(frozen=True)
class Scene:
    image_id: int
    height: int
    width: int
    components: tuple[tuple[Fraction, GroundTruthImage], ...]
    realized: int
    spec: SceneSpec | None = None

    @property
    def weights(self) -> tuple[Fraction, ...]:
        return tuple(w for w, _ in self.components)

    @property
    def ground_truth(self) -> GroundTruthImage:
        return self.components[self.realized][1]

    @property
    def mode_index(self) -> int:
        weights = self.weights
        top = max(weights)
        return weights.index(top)


def _layout(spec: SceneSpec, rng: np.random.Generator) -> list[_Unit]:
    n_objects = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    n_pairs = min(spec.merge_pairs, n_objects // 2)
    n_units = n_objects - n_pairs
    cols = math.ceil(math.sqrt(n_units))
    rows = math.ceil(n_units / cols)
    cell_h, cell_w = spec.height // rows, spec.width // cols
    grow = max(0, max(spec.boundary_offsets))
    shrink = max(0, -min(spec.boundary_offsets))
    margin = grow + 1
    # smallest object side that survives the largest erosion with pixels to spare
    min_side = 2 * shrink + 3
    if cell_h - 2 * margin < min_side or cell_w - 2 * margin < 2 * min_side:
        raise ValueError(
            f"grid {spec.height}x{spec.width} too small for {n_objects} objects with offsets "
            f"{sorted(spec.boundary_offsets)}"
        )

    slots = rng.permutation(rows * cols)[:n_units]
    pair_slots = set(slots[:n_pairs].tolist())
    units = []
    for slot in sorted(slots.tolist()):
        top, left = (slot // cols) * cell_h + margin, (slot % cols) * cell_w + margin
        avail_h, avail_w = cell_h - 2 * margin, cell_w - 2 * margin
        h = int(rng.integers(min_side, avail_h + 1))
        category = int(rng.integers(1, spec.n_categories + 1))
        r0 = top + int(rng.integers(0, avail_h - h + 1))
        if slot in pair_slots:
            w = int(rng.integers(2 * min_side, avail_w + 1))
            c0 = left + int(rng.integers(0, avail_w - w + 1))
            split = c0 + int(rng.integers(min_side, w - min_side + 1))
            a = _Shape("rect", (r0, c0, r0 + h - 1, split - 1))
            b = _Shape("rect", (r0, split, r0 + h - 1, c0 + w - 1))
            units.append(_Unit((a, b), category))
            continue
        w = int(rng.integers(min_side, avail_w + 1))
        c0 = left + int(rng.integers(0, avail_w - w + 1))
        kind = spec.shapes
        if kind == "mixed":
            kind = "ellipse" if rng.random() < 0.5 else "rect"
        if kind == "rect":
            shape = _Shape("rect", (r0, c0, r0 + h - 1, c0 + w - 1))
        else:
            shape = _Shape("ellipse", (r0 + (h - 1) / 2, c0 + (w - 1) / 2, h / 2, w / 2))
        units.append(_Unit((shape,), category))
    return units


def generate_scene(spec: SceneSpec, seed: int | None = None) -> Scene:
    """Lay out objects, instantiate the ambiguity factors and enumerate the posterior."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    units = _layout(spec, rng)

    q = exact(spec.merge_probability)
    factors: list[list[tuple[object, Fraction]]] = []
    merge_choices = [(c, w) for c, w in ((True, q), (False, 1 - q)) if w > 0]
    offset_choices = sorted((o, w) for o, w in spec.boundary_offsets.items() if w > 0)

    singles = [i for i, u in enumerate(units) if len(u.shapes) == 1]
    boundary_units = set(rng.permutation(singles)[: spec.ambiguous_boundaries].tolist()) if singles else set()
    wired = []
    for i, u in enumerate(units):
        mf = of = None
        if len(u.shapes) == 2:
            mf = len(factors)
            factors.append(merge_choices)
        if i in boundary_units:
            of = len(factors)
            factors.append(offset_choices)
        wired.append(_Unit(u.shapes, u.category, mf, of))

    n_components = math.prod(len(f) for f in factors)
    if n_components > spec.enumeration_cap:
        raise SceneTooLargeError(
            f"scene has {n_components} posterior components, cap is {spec.enumeration_cap}; "
            "reduce merge_pairs, ambiguous_boundaries or the number of boundary offsets"
        )

    image_id = int(seed)
    raster_cache: dict[tuple[int, int, int], BinaryMask] = {}

    def shape_mask(ui: int, si: int, offset: int) -> BinaryMask:
        key = (ui, si, offset)
        if key not in raster_cache:
            raster_cache[key] = encode(wired[ui].shapes[si].raster(spec.height, spec.width, offset))
        return raster_cache[key]

    components = []
    for choice in itertools.product(*factors):
        weight = math.prod((w for _, w in choice), start=Fraction(1))
        instances = []
        for ui, u in enumerate(wired):
            if u.merge_factor is not None:
                a, b = shape_mask(ui, 0, 0), shape_mask(ui, 1, 0)
                if choice[u.merge_factor][0]:
                    instances.append(Instance(union_of(a, b), u.category, 1.0))
                else:
                    instances += [Instance(a, u.category, 1.0), Instance(b, u.category, 1.0)]
            else:
                offset = choice[u.offset_factor][0] if u.offset_factor is not None else 0
                instances.append(Instance(shape_mask(ui, 0, offset), u.category, 1.0))
        components.append((weight, GroundTruthImage(image_id, spec.width, spec.height, tuple(instances))))

    assert sum(w for w, _ in components) == 1
    probs = np.array([float(w) for w, _ in components])
    realized = int(rng.choice(len(components), p=probs / probs.sum()))
    return Scene(image_id, spec.height, spec.width, tuple(components), realized, spec)


def sample_hypotheses(scene: Scene, k: int, seed: int) -> SampleSet:
    """Draw ``k`` complete segmentations from the scene posterior."""
    draws = sample_draws(scene, k, seed)
    hyps = [Hypothesis(scene.components[i][1].instances) for i in draws.tolist()]
    mode = Hypothesis(scene.components[scene.mode_index][1].instances)
    return SampleSet(scene.image_id, scene.width, scene.height, tuple(hyps), mode)


def sample_draws(scene: Scene, k: int, seed: int) -> np.ndarray:
    """Component indices behind :func:`sample_hypotheses` for the same seed."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    probs = np.array([float(w) for w in scene.weights])
    return rng.choice(len(probs), size=k, p=probs / probs.sum())


def containment_probability(scene: Scene, mask: BinaryMask) -> Fraction:
    """Exact posterior probability that some true instance contains ``mask``."""
    if mask.shape != (scene.height, scene.width):
        raise DimensionError(f"query is {mask.shape}, scene is {(scene.height, scene.width)}")
    total = Fraction(0)
    for weight, gt in scene.components:
        if any(contains(inst.mask, mask) for inst in gt.instances):
            total += weight
    return total
