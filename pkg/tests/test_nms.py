import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distseg.masks import contains, decode, encode, iog, iou
from distseg.model import Instance
from distseg.nms import NmsParams, standard_nms, union_nms, union_nms_groups

from helpers import rect, sample_set


def strip(cols: range, h: int = 4, w: int = 20):
    grid = np.zeros((h, w), dtype=bool)
    grid[:, cols.start : cols.stop] = True
    return encode(grid)


def chain():
    # A-B and B-C at IoU 0.6, A-C at 0.2: the lowest A-C IoU that Jaccard's
    # triangle inequality allows given the other two
    return strip(range(0, 12)), strip(range(0, 20)), strip(range(8, 20))


def test_chain_overlaps():
    a, b, c = chain()
    assert (iou(a, b), iou(b, c), iou(a, c)) == (0.6, 0.6, 0.2)


def test_params_validation():
    with pytest.raises(ValueError):
        NmsParams(tau=1.0)
    with pytest.raises(ValueError):
        NmsParams(tau=0.0)


def test_single_instance():
    inst = [Instance(rect(5, 5, 0, 0, 1, 1), 1, 0.7)]
    assert standard_nms(inst) == ([0], {})


def test_identical_masks():
    m = rect(5, 5, 0, 0, 2, 2)
    kept, sup = standard_nms([Instance(m, 1, 0.8), Instance(m, 1, 0.9)])
    assert kept == [1]
    assert sup == {0: 1}


def brute_force_nms(instances, tau):
    """Standard NMS from its definition: walk in score order, keep unless a kept mask overlaps > tau."""
    order = sorted(range(len(instances)), key=lambda i: (-instances[i].score, i))
    kept = []
    for i in order:
        if not any(iou(instances[i].mask, instances[j].mask) > tau for j in kept):
            kept.append(i)
    return kept


def test_chain_semantics():
    a, b, c = chain()
    insts = [Instance(a, 1, 0.9), Instance(b, 1, 0.8), Instance(c, 1, 0.7)]
    kept, sup = standard_nms(insts, NmsParams(0.5))
    # C survives: its only overlap above tau is with B, which was not kept
    assert kept == [0, 2]
    assert sup == {1: 0}
    assert kept == brute_force_nms(insts, 0.5)


def test_threshold_is_strict():
    a, b = strip(range(0, 10)), strip(range(2, 10))  # IoU exactly 0.8
    insts = [Instance(a, 1, 0.9), Instance(b, 1, 0.8)]
    assert standard_nms(insts, NmsParams(0.8))[0] == [0, 1]
    assert standard_nms(insts, NmsParams(0.79))[0] == [0]


def test_class_aware_switch():
    m = rect(5, 5, 0, 0, 2, 2)
    insts = [Instance(m, 1, 0.9), Instance(m, 2, 0.8)]
    assert standard_nms(insts, NmsParams(0.5, class_aware=True))[0] == [0, 1]
    assert standard_nms(insts, NmsParams(0.5, class_aware=False))[0] == [0]


def test_union_single_sample_equals_standard():
    ms = [(rect(10, 10, 0, 0, 4, 4), 0.9), (rect(10, 10, 1, 1, 4, 4), 0.8), (rect(10, 10, 6, 6, 9, 9), 0.7)]
    ss = sample_set([ms])
    out = union_nms(ss)
    kept, _ = standard_nms([Instance(m, 1, s) for m, s in ms])
    assert len(out) == len(kept)
    # with k = 1 the suppressed mask is a subset of its keeper, so the union is the keeper
    assert [o.mask for o in out] == [ms[i][0] for i in kept]


def test_union_recovers_larger_extent():
    a = rect(10, 10, 2, 2, 6, 6)
    grown = rect(10, 10, 2, 2, 6, 7)
    out = union_nms(sample_set([[(a, 0.9)], [(grown, 0.8)]]))
    assert len(out) == 1
    assert out[0].mask == grown
    assert out[0].score == 0.9


def test_union_staggered_samples():
    ms = [rect(12, 12, 2, 2 + s, 8, 8 + s) for s in range(3)]
    ss = sample_set([[(m, 0.9 - 0.1 * g)] for g, m in enumerate(ms)], 12, 12)
    instances, origins, kept, groups = union_nms_groups(ss, NmsParams(0.5))
    out = union_nms(ss, NmsParams(0.5))
    for o, i in zip(out, kept):
        ref = decode(instances[i].mask).copy()
        for j in groups[i]:
            ref |= decode(instances[j].mask)
        assert np.array_equal(decode(o.mask), ref)
    assert out[0].mask == rect(12, 12, 2, 2, 8, 10)


def random_instances(seed, n, size=12):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        r0, c0 = rng.integers(0, size - 2, 2)
        out.append(
            Instance(
                rect(size, size, r0, c0, min(size - 1, r0 + rng.integers(1, 6)), min(size - 1, c0 + rng.integers(1, 6))),
                int(rng.integers(1, 3)),
                float(rng.choice([0.3, 0.5, 0.8, 1.0])),
            )
        )
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10), st.sampled_from([0.3, 0.5, 0.7]))
def test_standard_nms_matches_definition(seed, n, tau):
    insts = random_instances(seed, n)
    kept, sup = standard_nms(insts, NmsParams(tau, class_aware=False))
    assert kept == brute_force_nms(insts, tau)
    assert set(kept).isdisjoint(sup)
    assert set(kept) | set(sup) == set(range(n))
    for j, i in sup.items():
        assert iou(insts[i].mask, insts[j].mask) > tau


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_union_nms_invariants(seed, k):
    rng = np.random.default_rng(seed)
    samples = [[(i.mask, i.score, i.category) for i in random_instances(int(rng.integers(1 << 30)), int(rng.integers(0, 4)))] for _ in range(k)]
    ss = sample_set(samples, 12, 12)
    params = NmsParams(0.5)
    instances, _, kept, groups = union_nms_groups(ss, params)
    out = union_nms(ss, params)
    assert len(out) == len(kept)
    seen = list(itertools.chain.from_iterable(groups.values()))
    assert len(seen) == len(set(seen))
    assert set(seen).isdisjoint(kept)
    gt = random_instances(seed + 1, 2)
    for o, i in zip(out, kept):
        assert contains(o.mask, instances[i].mask)
        for g in gt:
            assert iog(o.mask, g.mask) >= iog(instances[i].mask, g.mask)
