"""Score-ordered mask NMS and its high-recall union variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .masks import DimensionError, exact, intersection_area, union_all
from .model import Instance, SampleSet, ValidationError, canonical_order, validate

__all__ = ["NmsParams", "standard_nms", "union_nms", "union_nms_groups"]


@dataclass(frozen=True)
class NmsParams:
    tau: float = 0.5
    class_aware: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"NMS threshold tau must lie in (0, 1), got {self.tau}")


def standard_nms(
    instances: Sequence[Instance],
    params: NmsParams = NmsParams(),
    origins: Sequence[tuple[int, int]] | None = None,
) -> tuple[list[int], dict[int, int]]:
    """Keep an instance unless a kept, higher-priority one overlaps it by IoU > tau.

    Returns the kept indices in priority order and a map from every suppressed
    index to the first keeper that suppressed it.
    """
    if instances:
        shape = instances[0].mask.shape
        for inst in instances:
            if inst.mask.shape != shape:
                raise DimensionError(f"dimension mismatch: {shape} vs {inst.mask.shape}")
    tau = exact(params.tau)
    kept: list[int] = []
    suppressor: dict[int, int] = {}
    for i in canonical_order(instances, origins):
        a = instances[i]
        for j in kept:
            b = instances[j]
            if params.class_aware and a.category != b.category:
                continue
            inter = intersection_area(a.mask, b.mask)
            union = a.mask.area + b.mask.area - inter
            # IoU > tau, compared without rounding
            if union and inter * tau.denominator > tau.numerator * union:
                suppressor[i] = j
                break
        else:
            kept.append(i)
    return kept, suppressor


def union_nms_groups(sample_set: SampleSet, params: NmsParams = NmsParams()):
    """Flattened instances, origins, keepers and each keeper's suppressed set."""
    instances, origins = sample_set.flatten()
    kept, suppressor = standard_nms(instances, params, origins)
    groups: dict[int, list[int]] = {i: [] for i in kept}
    for j in sorted(suppressor):
        groups[suppressor[j]].append(j)
    return instances, origins, kept, groups


def union_nms(sample_set: SampleSet, params: NmsParams = NmsParams()) -> list[Instance]:
    """Union each NMS keeper with every mask it suppressed, across all samples."""
    violations = validate(sample_set)
    if violations:
        raise ValidationError(violations, f"sample set {sample_set.image_id!r}")
    instances, _, kept, groups = union_nms_groups(sample_set, params)
    out = []
    for i in kept:
        keeper = instances[i]
        mask = union_all([keeper.mask] + [instances[j].mask for j in groups[i]])
        out.append(Instance(mask, keeper.category, keeper.score))
    return out
