"""End-to-end check of the confidence-mask guarantee against synthetic scenes."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .confidence import ConfidenceMask, ConfidenceParams, extract, required_support
from .masks import contains
from .model import SampleSet
from .picksim import splitmix64
from .synth import Scene, SceneSpec, containment_probability, generate_scene, sample_hypotheses

__all__ = ["GuaranteeReport", "structural_violations", "trial_seeds", "verify_guarantee"]


def structural_violations(sample_set: SampleSet, masks: list[ConfidenceMask]) -> list[str]:
    """Support-size, distinct-sample, containment and disjointness violations."""
    out = []
    need = required_support(sample_set.k, masks[0].p) if masks else 0
    for n, c in enumerate(masks):
        samples = [g for g, _ in c.support]
        if len(c.support) < need:
            out.append(f"mask {n}: support {len(c.support)} < {need}")
        if len(set(samples)) != len(samples):
            out.append(f"mask {n}: support repeats a sample")
        if c.mask.area == 0:
            out.append(f"mask {n}: empty")
        for g, h in c.support:
            if not contains(sample_set.samples[g].instances[h].mask, c.mask):
                out.append(f"mask {n}: not contained in support mask ({g}, {h})")
        for m, other in enumerate(masks[:n]):
            if (c.mask & other.mask).area:
                out.append(f"masks {m} and {n} overlap")
    return out


def trial_seeds(seed: int, trials: int) -> list[tuple[int, int]]:
    """(scene seed, sampling seed) per trial, derived from one master seed."""
    stream = splitmix64(seed, 2 * trials).tolist()
    return [(stream[2 * t] >> 33, stream[2 * t + 1] >> 33) for t in range(trials)]


@dataclass
class GuaranteeReport:
    p: float
    k: int
    trials: int
    n_masks: int = 0
    n_contained: int = 0
    structural_violations: list[str] = field(default_factory=list)
    # mean exact posterior containment probability of the emitted masks
    mean_containment_probability: float | None = None
    slack: float = 0.05

    @property
    def containment_fraction(self) -> float | None:
        return self.n_contained / self.n_masks if self.n_masks else None

    @property
    def passed(self) -> bool:
        frac = self.containment_fraction
        return not self.structural_violations and frac is not None and frac >= self.p - self.slack

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "k": self.k,
            "trials": self.trials,
            "masks": self.n_masks,
            "contained": self.n_contained,
            "containment_fraction": self.containment_fraction,
            "mean_containment_probability": self.mean_containment_probability,
            "threshold": self.p - self.slack,
            "structural_violations": len(self.structural_violations),
            "passed": self.passed,
        }


def run_trial(scene: Scene, sample_set: SampleSet, p: float, score_floor: float = 0.1):
    masks = extract(sample_set, ConfidenceParams(p=p, score_floor=score_floor))
    truth = scene.ground_truth.instances
    contained = [any(contains(g.mask, c.mask) for g in truth) for c in masks]
    return masks, contained


def verify_guarantee(
    spec: SceneSpec,
    k: int,
    p: float,
    trials: int,
    seed: int,
    slack: float = 0.05,
    exact_probability: bool = True,
) -> GuaranteeReport:
    """Fraction of emitted confidence masks that lie inside the realized ground truth."""
    report = GuaranteeReport(p=p, k=k, trials=trials, slack=slack)
    prob_total = Fraction(0)
    for t, (scene_seed, draw_seed) in enumerate(trial_seeds(seed, trials)):
        scene = generate_scene(spec, scene_seed)
        ss = sample_hypotheses(scene, k, draw_seed)
        masks, contained = run_trial(scene, ss, p)
        report.n_masks += len(masks)
        report.n_contained += sum(contained)
        report.structural_violations += [f"trial {t}: {v}" for v in structural_violations(ss, masks)]
        if exact_probability:
            for c in masks:
                prob_total += containment_probability(scene, c.mask)
    if exact_probability and report.n_masks:
        report.mean_containment_probability = float(prob_total / report.n_masks)
    return report
