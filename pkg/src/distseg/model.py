"""Instances, hypotheses, sample sets and ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .masks import BinaryMask

__all__ = [
    "Instance",
    "Hypothesis",
    "SampleSet",
    "GroundTruthImage",
    "ValidationError",
    "validate",
    "validate_ground_truth",
    "canonical_order",
]


class ValidationError(ValueError):
    def __init__(self, violations: Sequence[str], context: str = ""):
        self.violations = list(violations)
        head = f"{context}: " if context else ""
        super().__init__(head + "; ".join(self.violations))


@dataclass(frozen=True)
class Instance:
    mask: BinaryMask
    category: int = 1
    score: float = 1.0


@dataclass(frozen=True)
class Hypothesis:
    """One complete segmentation of an image."""

    instances: tuple[Instance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i: int) -> Instance:
        return self.instances[i]


@dataclass(frozen=True)
class SampleSet:
    """``k`` sampled hypotheses for one image, plus an optional point estimate."""

    image_id: Hashable
    width: int
    height: int
    samples: tuple[Hypothesis, ...]
    mode: Hypothesis | None = None

    def __post_init__(self):
        object.__setattr__(
            self,
            "samples",
            tuple(s if isinstance(s, Hypothesis) else Hypothesis(tuple(s)) for s in self.samples),
        )
        if self.mode is not None and not isinstance(self.mode, Hypothesis):
            object.__setattr__(self, "mode", Hypothesis(tuple(self.mode)))

    @property
    def k(self) -> int:
        return len(self.samples)

    def flatten(self) -> tuple[list[Instance], list[tuple[int, int]]]:
        """All instances across samples with their ``(sample, instance)`` origins."""
        instances, origins = [], []
        for g, hyp in enumerate(self.samples):
            for h, inst in enumerate(hyp.instances):
                instances.append(inst)
                origins.append((g, h))
        return instances, origins


@dataclass(frozen=True)
class GroundTruthImage:
    image_id: Hashable
    width: int
    height: int
    instances: tuple[Instance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))


def _instance_violations(inst: Instance, where: str, height: int, width: int) -> list[str]:
    out = []
    if not isinstance(inst.mask, BinaryMask):
        return [f"{where}: mask is not a BinaryMask"]
    if inst.mask.shape != (height, width):
        out.append(f"{where}: mask is {inst.mask.height}x{inst.mask.width}, image is {height}x{width}")
    if not 0.0 <= inst.score <= 1.0:
        out.append(f"{where}: score {inst.score!r} outside [0, 1]")
    if inst.mask.area == 0:
        out.append(f"{where}: empty mask")
    return out


def validate(sample_set: SampleSet) -> list[str]:
    """Return the list of invariant violations; empty means valid."""
    out = []
    if sample_set.width <= 0 or sample_set.height <= 0:
        out.append(f"image dimensions {sample_set.height}x{sample_set.width} not positive")
        return out
    if sample_set.k < 1:
        out.append("sample set has no samples")
    for g, hyp in enumerate(sample_set.samples):
        for h, inst in enumerate(hyp.instances):
            out += _instance_violations(inst, f"sample {g} instance {h}", sample_set.height, sample_set.width)
    if sample_set.mode is not None:
        for h, inst in enumerate(sample_set.mode.instances):
            out += _instance_violations(inst, f"mode instance {h}", sample_set.height, sample_set.width)
    return out


def validate_ground_truth(image: GroundTruthImage, categories: set[int] | None = None) -> list[str]:
    out = []
    if image.width <= 0 or image.height <= 0:
        return [f"image {image.image_id}: dimensions {image.height}x{image.width} not positive"]
    for i, inst in enumerate(image.instances):
        out += _instance_violations(inst, f"image {image.image_id} instance {i}", image.height, image.width)
        if categories is not None and inst.category not in categories:
            out.append(f"image {image.image_id} instance {i}: unknown category {inst.category}")
    return out


def canonical_order(instances: Sequence, origins: Sequence[tuple[int, int]] | None = None) -> list[int]:
    """Indices sorted by score descending, ties by origin ``(sample, instance)``.

    ``instances`` may hold :class:`Instance` objects or bare scores.  Without
    ``origins`` the tie-break is the list position.
    """
    scores = [x.score if isinstance(x, Instance) else float(x) for x in instances]
    if origins is None:
        return sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(range(len(scores)), key=lambda i: (-scores[i], origins[i][0], origins[i][1], i))
