import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from distseg.confidence import extract
from distseg.masks import BinaryMask, DimensionError, contains, union_all
from distseg.model import GroundTruthImage, Instance
from distseg.synth import (
    Scene,
    SceneSpec,
    SceneTooLargeError,
    containment_probability,
    generate_scene,
    sample_draws,
    sample_hypotheses,
)

from helpers import rect


def test_no_ambiguity_single_component():
    scene = generate_scene(SceneSpec(merge_probability=0, boundary_offsets={0: 1.0}), 3)
    assert scene.weights == (Fraction(1),)
    ss = sample_hypotheses(scene, 20, 1)
    assert all(h == ss.samples[0] for h in ss.samples)


def test_single_bernoulli_merge():
    spec = SceneSpec(min_objects=2, max_objects=4, merge_probability=0.5, merge_pairs=1, ambiguous_boundaries=0)
    scene = generate_scene(spec, 5)
    assert scene.weights == (Fraction(1, 2), Fraction(1, 2))
    merged, split = (gt.instances for _, gt in scene.components)
    assert len(split) == len(merged) + 1


def test_product_lattice_weights():
    spec = SceneSpec(
        min_objects=5,
        max_objects=6,
        merge_probability=0.3,
        merge_pairs=2,
        boundary_offsets={-1: 0.5, 1: 0.5},
        ambiguous_boundaries=1,
    )
    scene = generate_scene(spec, 11)
    q = Fraction(3, 10)
    lattice = [a * b * c for a, b, c in itertools.product((q, 1 - q), (q, 1 - q), (Fraction(1, 2), Fraction(1, 2)))]
    assert len(scene.components) == 8
    assert sorted(scene.weights) == sorted(lattice)
    assert sum(scene.weights) == 1


def test_offsets_move_only_the_ambiguous_boundary():
    spec = SceneSpec(min_objects=3, max_objects=3, merge_pairs=0, boundary_offsets={-1: 0.25, 0: 0.5, 2: 0.25}, ambiguous_boundaries=1)
    scene = generate_scene(spec, 2)
    assert len(scene.components) == 3
    insts = [gt.instances for _, gt in scene.components]
    changed = [i for i in range(3) if len({comp[i].mask for comp in insts}) > 1]
    assert len(changed) == 1
    sizes = [comp[changed[0]].mask.area for comp in insts]
    assert sizes == sorted(sizes)


def test_enumeration_cap():
    spec = SceneSpec(min_objects=6, max_objects=6, merge_pairs=3, merge_probability=0.5, enumeration_cap=4)
    with pytest.raises(SceneTooLargeError):
        generate_scene(spec, 0)


@pytest.mark.parametrize(
    "fields",
    [
        {"merge_probability": 1.5},
        {"boundary_offsets": {0: 0.5, 1: 0.4}},
        {"min_objects": 0},
        {"shapes": "star"},
    ],
)
def test_spec_validation(fields):
    with pytest.raises(ValueError):
        SceneSpec(**fields)


def test_spec_dict_round_trip():
    spec = SceneSpec(boundary_offsets={-1: 0.5, 1: 0.5})
    d = spec.to_dict()
    assert d["boundary_offsets"] == {"-1": "1/2", "1": "1/2"}
    again = SceneSpec.from_dict({**d, "boundary_offsets": {int(k): Fraction(v) for k, v in d["boundary_offsets"].items()}})
    assert again == spec
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"bogus": 1})


def test_generation_is_deterministic():
    a = generate_scene(SceneSpec(), 42)
    b = generate_scene(SceneSpec(), 42)
    assert a == b
    assert sample_hypotheses(a, 15, 3) == sample_hypotheses(b, 15, 3)


def test_two_component_frequencies():
    spec = SceneSpec(min_objects=2, max_objects=2, merge_probability=0.5, merge_pairs=1, ambiguous_boundaries=0)
    scene = generate_scene(spec, 0)
    draws = sample_draws(scene, 10_000, 9)
    freq = (draws == 0).mean()
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / 10_000)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_component_frequencies_chi_square(seed):
    spec = SceneSpec(min_objects=5, max_objects=6, merge_pairs=2, boundary_offsets={-1: 0.2, 0: 0.5, 1: 0.3})
    scene = generate_scene(spec, seed)
    k = 10_000
    counts = np.bincount(sample_draws(scene, k, seed), minlength=len(scene.components))
    expected = np.array([float(w) for w in scene.weights]) * k
    assert chisquare(counts, expected).pvalue > 0.01


def test_samples_follow_draws():
    scene = generate_scene(SceneSpec(merge_pairs=1, boundary_offsets={0: 0.5, 1: 0.5}), 4)
    ss = sample_hypotheses(scene, 30, 8)
    for hyp, d in zip(ss.samples, sample_draws(scene, 30, 8).tolist()):
        assert hyp.instances == scene.components[d][1].instances
    assert ss.mode.instances == scene.components[scene.mode_index][1].instances


def test_mode_is_argmax_with_lowest_index_ties():
    a = GroundTruthImage(0, 8, 8, (Instance(rect(8, 8, 0, 0, 3, 3)),))
    b = GroundTruthImage(0, 8, 8, (Instance(rect(8, 8, 0, 0, 4, 4)),))
    scene = Scene(0, 8, 8, ((Fraction(7, 10), a), (Fraction(3, 10), b)), 1)
    assert scene.mode_index == 0
    assert sample_hypotheses(scene, 3, 0).mode.instances == a.instances
    tie = Scene(0, 8, 8, ((Fraction(1, 2), b), (Fraction(1, 2), a)), 0)
    assert tie.mode_index == 0


def test_containment_probability_examples():
    spec = SceneSpec(min_objects=3, max_objects=4, merge_probability=0.3, merge_pairs=1, ambiguous_boundaries=0)
    scene = generate_scene(spec, 6)
    merged = next(gt for w, gt in scene.components if w == Fraction(3, 10))
    split = next(gt for w, gt in scene.components if w == Fraction(7, 10))
    pair_union = next(i.mask for i in merged.instances if i.mask not in {s.mask for s in split.instances})
    assert containment_probability(scene, pair_union) == Fraction(3, 10)
    common = next(i.mask for i in split.instances if i.mask in {m.mask for m in merged.instances})
    assert containment_probability(scene, common) == 1
    occupied = union_all([i.mask for _, gt in scene.components for i in gt.instances])
    free = BinaryMask.full(scene.height, scene.width) - occupied
    assert containment_probability(scene, free) == 0
    with pytest.raises(DimensionError):
        containment_probability(scene, BinaryMask.full(3, 3))


@pytest.mark.parametrize("seed", range(6))
def test_mode_masks_are_at_least_as_likely_as_the_mode(seed):
    scene = generate_scene(SceneSpec(merge_pairs=2, boundary_offsets={-1: 0.3, 0: 0.4, 1: 0.3}, min_objects=4), seed)
    mode_weight = scene.weights[scene.mode_index]
    for inst in scene.components[scene.mode_index][1].instances:
        assert containment_probability(scene, inst.mask) >= mode_weight


@pytest.mark.parametrize("seed", range(8))
def test_support_fraction_tracks_posterior(seed):
    # the share of samples containing a confidence mask estimates its containment probability
    k = 400
    scene = generate_scene(SceneSpec(merge_pairs=2, min_objects=4, boundary_offsets={-1: 0.3, 0: 0.4, 1: 0.3}), seed)
    ss = sample_hypotheses(scene, k, seed + 100)
    for c in extract(ss, 0.75):
        share = sum(any(contains(i.mask, c.mask) for i in hyp.instances) for hyp in ss.samples) / k
        prob = float(containment_probability(scene, c.mask))
        radius = 2.576 * math.sqrt(prob * (1 - prob) / k)
        assert abs(share - prob) <= radius + 1e-12
