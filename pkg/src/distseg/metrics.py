"""Matching and evaluation metrics for instance masks.

All metrics share one greedy matcher: predictions are visited in canonical
score order and each takes the unmatched same-class ground truth with the
largest overlap, provided that overlap reaches the threshold.  Overlaps are
kept as integer pixel counts and compared against thresholds as exact
fractions, so no result depends on floating-point rounding of a ratio.

Dataset-level functions take ``predictions`` and ``ground_truths`` as
parallel sequences with one entry per image: a list of :class:`Instance` for
predictions and a :class:`GroundTruthImage` (or list of instances) for ground
truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .masks import BinaryMask, DimensionError, UndefinedOverlapError, exact, intersection_area
from .model import GroundTruthImage, Instance, canonical_order

__all__ = [
    "OVERLAPS",
    "COCO_THRESHOLDS",
    "MRHP_GRID",
    "MatchSpec",
    "MatchOutcome",
    "APResult",
    "EvalReport",
    "match",
    "average_precision",
    "average_recall",
    "mr_at_hp",
    "roc_auc",
    "iop_exceedance",
    "best_overlaps",
    "calibration_auc",
    "evaluate",
]

OVERLAPS = ("iou", "iop", "iog")
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
MRHP_GRID = (0.75, 0.8, 0.85, 0.9, 0.95)
RECALL_LEVELS = 101


@dataclass(frozen=True)
class MatchSpec:
    overlap: str = "iou"
    threshold: float = 0.5
    class_aware: bool = True

    def __post_init__(self):
        if self.overlap not in OVERLAPS:
            raise ValueError(f"overlap must be one of {OVERLAPS}, got {self.overlap!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")


@dataclass(frozen=True)
class MatchOutcome:
    # per prediction, in input order
    tp: tuple[bool, ...]
    scores: tuple[float, ...]
    matched_gt: tuple[int | None, ...]
    # per ground truth
    gt_matched: tuple[bool, ...]

    @property
    def n_pred(self) -> int:
        return len(self.tp)

    @property
    def n_gt(self) -> int:
        return len(self.gt_matched)

    @property
    def n_tp(self) -> int:
        return sum(self.tp)


class _PairTable:
    """Sparse pairwise intersections between one image's predictions and ground truth."""

    def __init__(self, preds: Sequence[Instance], gts: Sequence[Instance], class_aware: bool = True):
        self.preds = list(preds)
        self.gts = list(gts)
        shapes = {i.mask.shape for i in self.preds} | {g.mask.shape for g in self.gts}
        if len(shapes) > 1:
            raise DimensionError(f"masks in one image disagree on dimensions: {sorted(shapes)}")
        self.class_aware = class_aware
        self.pred_area = [p.mask.area for p in self.preds]
        self.gt_area = [g.mask.area for g in self.gts]
        self.order = canonical_order(self.preds)
        self.cands: list[list[tuple[int, int]]] = [[] for _ in self.preds]
        if not self.preds or not self.gts:
            return
        pb = _bbox_array([p.mask for p in self.preds])
        gb = _bbox_array([g.mask for g in self.gts])
        near = (
            (pb[:, None, 0] <= gb[None, :, 2])
            & (gb[None, :, 0] <= pb[:, None, 2])
            & (pb[:, None, 1] <= gb[None, :, 3])
            & (gb[None, :, 1] <= pb[:, None, 3])
        )
        if class_aware:
            pc = np.array([p.category for p in self.preds])
            gc = np.array([g.category for g in self.gts])
            near &= pc[:, None] == gc[None, :]
        for i, j in zip(*np.nonzero(near)):
            inter = intersection_area(self.preds[i].mask, self.gts[j].mask)
            if inter:
                self.cands[i].append((int(j), inter))

    def check(self, overlap: str) -> None:
        if overlap == "iop" and 0 in self.pred_area:
            raise UndefinedOverlapError(f"IoP undefined: prediction {self.pred_area.index(0)} is empty")
        if overlap == "iog" and 0 in self.gt_area:
            raise UndefinedOverlapError(f"IoG undefined: ground truth {self.gt_area.index(0)} is empty")
        if overlap == "iou" and 0 in self.pred_area and 0 in self.gt_area:
            raise UndefinedOverlapError("IoU undefined between an empty prediction and an empty ground truth")

    def denominator(self, overlap: str, i: int, j: int, inter: int) -> int:
        if overlap == "iou":
            return self.pred_area[i] + self.gt_area[j] - inter
        if overlap == "iop":
            return self.pred_area[i]
        return self.gt_area[j]

    def match(self, overlap: str, threshold) -> list[int | None]:
        self.check(overlap)
        thr = exact(threshold)
        tn, td = thr.numerator, thr.denominator
        taken = [False] * len(self.gts)
        assigned: list[int | None] = [None] * len(self.preds)
        for i in self.order:
            best_j, best_inter, best_den = None, 0, 1
            for j, inter in self.cands[i]:
                if taken[j]:
                    continue
                den = self.denominator(overlap, i, j, inter)
                if inter * td < tn * den:
                    continue
                # strictly larger ratio wins; candidates arrive in ground-truth index order
                if best_j is None or inter * best_den > best_inter * den:
                    best_j, best_inter, best_den = j, inter, den
            if best_j is not None:
                taken[best_j] = True
                assigned[i] = best_j
        return assigned


def _bbox_array(masks: Sequence[BinaryMask]) -> np.ndarray:
    out = np.empty((len(masks), 4), dtype=np.int64)
    for n, m in enumerate(masks):
        # empty masks get an inverted box that overlaps nothing
        out[n] = m.bbox if m.bbox is not None else (1, 1, 0, 0)
    return out


def _gt_instances(gt) -> list[Instance]:
    return list(gt.instances) if isinstance(gt, GroundTruthImage) else list(gt)


def match(predictions: Sequence[Instance], ground_truths, spec: MatchSpec = MatchSpec()) -> MatchOutcome:
    """Greedy one-to-one matching of one image's predictions to its ground truth."""
    table = _PairTable(predictions, _gt_instances(ground_truths), spec.class_aware)
    assigned = table.match(spec.overlap, spec.threshold)
    gt_matched = [False] * len(table.gts)
    for j in assigned:
        if j is not None:
            gt_matched[j] = True
    return MatchOutcome(
        tp=tuple(j is not None for j in assigned),
        scores=tuple(float(p.score) for p in table.preds),
        matched_gt=tuple(assigned),
        gt_matched=tuple(gt_matched),
    )


# dataset level -----------------------------------------------------------------


class _Dataset:
    """Pair tables for every image plus cached matchings per (overlap, threshold)."""

    def __init__(self, predictions, ground_truths, class_aware: bool = True):
        if len(predictions) != len(ground_truths):
            raise ValueError(f"{len(predictions)} prediction images vs {len(ground_truths)} ground-truth images")
        self.class_aware = class_aware
        self.tables = [
            _PairTable(list(p), _gt_instances(g), class_aware) for p, g in zip(predictions, ground_truths)
        ]
        scores, cats, img, rank = [], [], [], []
        for n, t in enumerate(self.tables):
            for pos, i in enumerate(t.order):
                scores.append(float(t.preds[i].score))
                cats.append(t.preds[i].category if class_aware else 0)
                img.append(n)
                rank.append(pos)
        self.scores = np.array(scores, dtype=np.float64)
        self.pred_cat = np.array(cats, dtype=np.int64)
        # global canonical order: score desc, then image, then in-image priority
        self.sequence = np.lexsort((np.array(rank, dtype=np.int64), np.array(img, dtype=np.int64), -self.scores))
        gt_cats = [g.category if class_aware else 0 for t in self.tables for g in t.gts]
        self.gt_cat = np.array(gt_cats, dtype=np.int64)
        self._cache: dict[tuple[str, Fraction], tuple[np.ndarray, int]] = {}

    @property
    def n_gt(self) -> int:
        return int(self.gt_cat.size)

    def labels(self, overlap: str, threshold) -> tuple[np.ndarray, int]:
        """TP flags aligned with the flattened prediction list, and matched-GT total."""
        key = (overlap, exact(threshold))
        if key not in self._cache:
            tp, matched = [], 0
            for t in self.tables:
                assigned = t.match(overlap, threshold)
                tp.extend(assigned[i] is not None for i in t.order)
                matched += sum(j is not None for j in assigned)
            self._cache[key] = (np.array(tp, dtype=bool), matched)
        return self._cache[key]

    def curve(self, tp: np.ndarray, category: int | None = None):
        """Cumulative (cutoff, tp, n) at every distinct score, highest first."""
        seq = self.sequence
        if category is not None:
            seq = seq[self.pred_cat[seq] == category]
        if seq.size == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        s = self.scores[seq]
        tps = np.cumsum(tp[seq])
        ends = np.flatnonzero(np.concatenate((s[1:] != s[:-1], [True])))
        return s[ends], tps[ends], ends + 1


def _interpolated_ap(tp: np.ndarray, n: np.ndarray, n_gt: int) -> float:
    """101-point area under the precision envelope."""
    if tp.size == 0:
        return 0.0
    precision = tp / n
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(RECALL_LEVELS, dtype=np.int64)
    # first cutoff with recall >= level / 100, in integers: 100 * tp >= level * n_gt
    first = np.searchsorted((RECALL_LEVELS - 1) * tp, levels * n_gt, side="left")
    sampled = np.where(first < tp.size, envelope[np.minimum(first, tp.size - 1)], 0.0)
    return math.fsum(sampled.tolist()) / RECALL_LEVELS


@dataclass(frozen=True)
class APResult:
    mAP: float | None
    per_class: dict[int, float]
    per_class_threshold: dict[tuple[int, float], float]
    excluded_classes: tuple[int, ...] = ()


def _ap_from_dataset(ds: _Dataset, overlap: str, thresholds: Sequence[float]) -> APResult:
    if ds.n_gt == 0:
        raise ValueError("average precision needs at least one ground-truth instance")
    gt_counts = {int(c): int(n) for c, n in zip(*np.unique(ds.gt_cat, return_counts=True))}
    excluded = tuple(sorted(set(np.unique(ds.pred_cat).tolist()) - set(gt_counts)))
    per_ct: dict[tuple[int, float], float] = {}
    for thr in thresholds:
        tp, _ = ds.labels(overlap, thr)
        for c, n_gt in gt_counts.items():
            _, tps, ns = ds.curve(tp, c)
            per_ct[(c, thr)] = _interpolated_ap(tps, ns, n_gt)
    per_class = {c: math.fsum(per_ct[(c, t)] for t in thresholds) / len(thresholds) for c in gt_counts}
    m = math.fsum(per_class.values()) / len(per_class)
    return APResult(m, per_class, per_ct, excluded)


def average_precision(
    predictions,
    ground_truths,
    overlap: str = "iou",
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    class_aware: bool = True,
) -> APResult:
    """Per-class AP averaged over ``thresholds``, and its mean over classes."""
    MatchSpec(overlap)
    return _ap_from_dataset(_Dataset(predictions, ground_truths, class_aware), overlap, thresholds)


def _ar_from_dataset(ds: _Dataset, overlap: str, thresholds: Sequence[float]) -> float:
    if ds.n_gt == 0:
        raise ValueError("average recall needs at least one ground-truth instance")
    recalls = [ds.labels(overlap, thr)[1] / ds.n_gt for thr in thresholds]
    return math.fsum(recalls) / len(recalls)


def average_recall(
    predictions,
    ground_truths,
    overlap: str = "iou",
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    class_aware: bool = True,
) -> float:
    """Matched ground truth over total ground truth, averaged over ``thresholds``."""
    MatchSpec(overlap)
    return _ar_from_dataset(_Dataset(predictions, ground_truths, class_aware), overlap, thresholds)


def _mrhp_from_dataset(ds: _Dataset, p_grid: Sequence[float], tau_grid: Sequence[float]) -> float:
    if ds.n_gt == 0:
        raise ValueError("MR@HP needs at least one ground-truth instance")
    if not p_grid or not tau_grid:
        raise ValueError("MR@HP grids must be non-empty")
    cells = []
    for tau in tau_grid:
        tp, _ = ds.labels("iop", tau)
        _, tps, ns = ds.curve(tp)
        for p in p_grid:
            pf = exact(p)
            ok = tps * pf.denominator >= pf.numerator * ns
            cells.append(float(tps[ok].max()) / ds.n_gt if ok.any() else 0.0)
    return math.fsum(cells) / len(cells)


def mr_at_hp(
    predictions,
    ground_truths,
    p_grid: Sequence[float] = MRHP_GRID,
    tau_grid: Sequence[float] = MRHP_GRID,
    class_aware: bool = True,
) -> float:
    """Max recall at high precision, with IoP matching, averaged over the grid."""
    return _mrhp_from_dataset(_Dataset(predictions, ground_truths, class_aware), p_grid, tau_grid)


def roc_auc(scored_labels: Sequence[tuple[float, bool]]) -> float:
    """Mann-Whitney AUC with average ranks for tied scores."""
    if not scored_labels:
        raise ValueError("ROC AUC needs labelled scores")
    scores = np.array([float(s) for s, _ in scored_labels])
    labels = np.array([bool(y) for _, y in scored_labels])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _mask_of(x) -> BinaryMask:
    return x if isinstance(x, BinaryMask) else x.mask


def best_overlaps(predictions: Sequence, ground_truth, overlap: str = "iou") -> list[Fraction]:
    """Largest overlap of each prediction with any ground-truth mask (class-agnostic)."""
    gts = [g.mask for g in _gt_instances(ground_truth)]
    out = []
    for x in predictions:
        m = _mask_of(x)
        if overlap == "iop" and m.area == 0:
            raise UndefinedOverlapError("IoP undefined for an empty prediction")
        best = Fraction(0)
        for g in gts:
            inter = intersection_area(m, g)
            if not inter:
                continue
            den = {"iou": m.area + g.area - inter, "iop": m.area, "iog": g.area}[overlap]
            best = max(best, Fraction(inter, den))
        out.append(best)
    return out


def iop_exceedance(
    predictions_by_p: Mapping[Hashable, Sequence[Sequence]],
    ground_truths: Sequence,
    iop_cut: float = 0.95,
) -> dict[Hashable, float | None]:
    """Fraction of predictions whose best ground-truth IoP exceeds ``iop_cut``, per bucket.

    An empty bucket maps to None rather than 0.
    """
    cut = exact(iop_cut)
    out: dict[Hashable, float | None] = {}
    for key, per_image in predictions_by_p.items():
        if len(per_image) != len(ground_truths):
            raise ValueError(f"bucket {key!r}: {len(per_image)} images vs {len(ground_truths)} ground-truth images")
        hits = total = 0
        for preds, gt in zip(per_image, ground_truths):
            for v in best_overlaps(preds, gt, "iop"):
                total += 1
                hits += v > cut
        out[key] = hits / total if total else None
    return out


def calibration_pairs(predictions, ground_truths, iou_cut: float = 0.5) -> list[tuple[float, bool]]:
    """(score, best-GT IoU >= cut) for every prediction."""
    cut = exact(iou_cut)
    pairs = []
    for preds, gt in zip(predictions, ground_truths):
        for inst, v in zip(preds, best_overlaps(preds, gt, "iou")):
            pairs.append((float(inst.score), v >= cut))
    return pairs


def calibration_auc(predictions, ground_truths, iou_cut: float = 0.5) -> float | None:
    """ROC AUC of scores predicting best-GT IoU >= ``iou_cut``; None if one label is absent."""
    pairs = calibration_pairs(predictions, ground_truths, iou_cut)
    labels = {y for _, y in pairs}
    if len(labels) < 2:
        return None
    return roc_auc(pairs)


# report ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    mAP: float | None = None
    AR: float | None = None
    AR_iog: float | None = None
    MR_at_HP: float | None = None
    per_class_ap: dict[int, float] = field(default_factory=dict)
    per_class_threshold_ap: dict[tuple[int, float], float] = field(default_factory=dict)
    excluded_classes: tuple[int, ...] = ()
    # (category, overlap, threshold) -> [(cutoff, precision, recall), ...]
    pr_curves: dict[tuple[int, str, float], list[tuple[float, float, float]]] = field(default_factory=dict)
    calibration_auc: float | None = None
    iop_exceedance: dict[str, float | None] = field(default_factory=dict)
    n_images: int = 0
    n_predictions: int = 0
    n_ground_truth: int = 0

    def scalars(self) -> dict[str, float | None]:
        return {
            "mAP": self.mAP,
            "AR": self.AR,
            "AR_iog": self.AR_iog,
            "MR@HP": self.MR_at_HP,
            "calibration_auc": self.calibration_auc,
        }

    def to_json(self) -> dict:
        return {
            "summary": self.scalars(),
            "counts": {
                "images": self.n_images,
                "predictions": self.n_predictions,
                "ground_truth": self.n_ground_truth,
            },
            "per_class_ap": {str(c): v for c, v in sorted(self.per_class_ap.items())},
            "per_class_threshold_ap": [
                {"category": c, "threshold": t, "ap": v} for (c, t), v in sorted(self.per_class_threshold_ap.items())
            ],
            "excluded_classes": list(self.excluded_classes),
            "iop_exceedance": dict(self.iop_exceedance),
            "pr_curves": [
                {"category": c, "overlap": o, "threshold": t, "points": [list(p) for p in pts]}
                for (c, o, t), pts in sorted(self.pr_curves.items())
            ],
        }

    CSV_HEADER = ("record", "name", "category", "overlap", "threshold", "cutoff", "precision", "recall", "value")

    def to_rows(self) -> list[tuple]:
        """Flat rows matching :attr:`CSV_HEADER`."""
        rows: list[tuple] = []
        for name, v in self.scalars().items():
            rows.append(("metric", name, "", "", "", "", "", "", "" if v is None else v))
        for c, v in sorted(self.per_class_ap.items()):
            rows.append(("class_ap", "AP", c, "iou", "0.50:0.95", "", "", "", v))
        for (c, t), v in sorted(self.per_class_threshold_ap.items()):
            rows.append(("class_ap", "AP", c, "iou", t, "", "", "", v))
        for c in self.excluded_classes:
            rows.append(("excluded_class", "no ground truth", c, "", "", "", "", "", ""))
        for key, v in self.iop_exceedance.items():
            rows.append(("iop_exceedance", key, "", "iop", "", "", "", "", "" if v is None else v))
        for (c, o, t), pts in sorted(self.pr_curves.items()):
            for cutoff, prec, rec in pts:
                rows.append(("pr_curve", "", c, o, t, cutoff, prec, rec, ""))
        return rows


def evaluate(
    predictions,
    ground_truths,
    metrics: Sequence[str] = ("map", "ar", "ar-iog", "mrhp"),
    p_grid: Sequence[float] = MRHP_GRID,
    tau_grid: Sequence[float] = MRHP_GRID,
    class_aware: bool = True,
    curve_thresholds: Sequence[float] = (0.5, 0.75),
    iop_cut: float = 0.95,
) -> EvalReport:
    """Compute the requested metrics over a dataset into one :class:`EvalReport`."""
    unknown = set(metrics) - {"map", "ar", "ar-iog", "mrhp"}
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    ds = _Dataset(predictions, ground_truths, class_aware)
    report = EvalReport(
        n_images=len(ds.tables),
        n_predictions=int(ds.scores.size),
        n_ground_truth=ds.n_gt,
    )
    if "map" in metrics:
        ap = _ap_from_dataset(ds, "iou", COCO_THRESHOLDS)
        report.mAP = ap.mAP
        report.per_class_ap = dict(ap.per_class)
        report.per_class_threshold_ap = dict(ap.per_class_threshold)
        report.excluded_classes = ap.excluded_classes
        for thr in curve_thresholds:
            tp, _ = ds.labels("iou", thr)
            for c in ap.per_class:
                cut, tps, ns = ds.curve(tp, c)
                n_gt = int((ds.gt_cat == c).sum())
                report.pr_curves[(c, "iou", thr)] = [
                    (float(s), float(t / n), float(t / n_gt)) for s, t, n in zip(cut, tps, ns)
                ]
    if "ar" in metrics:
        report.AR = _ar_from_dataset(ds, "iou", COCO_THRESHOLDS)
    if "ar-iog" in metrics:
        report.AR_iog = _ar_from_dataset(ds, "iog", COCO_THRESHOLDS)
    if "mrhp" in metrics:
        report.MR_at_HP = _mrhp_from_dataset(ds, p_grid, tau_grid)
    report.calibration_auc = calibration_auc(predictions, ground_truths)
    report.iop_exceedance = {"all": iop_exceedance({"all": predictions}, ground_truths, iop_cut)["all"]}
    return report
