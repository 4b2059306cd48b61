"""Command-line entry point: ``distseg <command> ...``.

Exit codes: 0 success, 1 validation failure (or a failed guarantee check),
2 I/O, schema or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .confidence import ConfidenceParams, extract
from .formats import (
    SchemaError,
    align_predictions,
    ground_truth_to_json,
    instance_to_json,
    load_ground_truth,
    load_predictions,
    load_samples,
    samples_to_json,
    write_json,
)
from .masks import MalformedMaskError
from .metrics import MRHP_GRID, best_overlaps, calibration_auc, calibration_pairs, evaluate, iop_exceedance
from .model import ValidationError
from .nms import NmsParams, union_nms
from .oracle import trial_seeds, verify_guarantee
from .picksim import PickSimConfig, estimate_dataset
from .synth import SceneSpec, generate_scene, sample_hypotheses

log = logging.getLogger("distseg")


# argument types --------------------------------------------------------------------


def _unit(lo_open: bool, hi_open: bool) -> Callable[[str], float]:
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if (v <= 0 if lo_open else v < 0) or (v >= 1 if hi_open else v > 1):
            lo, hi = "(" if lo_open else "[", ")" if hi_open else "]"
            raise argparse.ArgumentTypeError(f"{v} outside {lo}0, 1{hi}")
        return v

    return parse


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def _radius(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("radius must be at least 1 pixel")
    return v


# helpers -----------------------------------------------------------------------------


def _ordered_map(fn, items: Sequence, jobs: int) -> list:
    """``map`` that keeps input order, optionally over worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _stem(path: str) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".csv", ".svg") else p


def _with_suffix(stem: Path, tail: str) -> Path:
    return stem.with_name(stem.name + tail)


def _write_csv(path: Path, header: Iterable, rows: Iterable[Iterable]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _labels(paths: Sequence[str]) -> list[str]:
    stems = [Path(p).stem for p in paths]
    return stems if len(set(stems)) == len(stems) else list(paths)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _load_aligned(gt_path: str, pred_path: str):
    images = load_ground_truth(gt_path)
    preds = align_predictions(load_predictions(pred_path), images)
    return images, preds


# per-image workers (top level so they pickle) -----------------------------------------


def _confmask_one(job) -> list[dict]:
    ss, params = job
    return [instance_to_json(c, p=c.p, support=[list(s) for s in c.support]) for c in extract(ss, params)]


def _union_nms_one(job) -> list[dict]:
    ss, params = job
    return [instance_to_json(i) for i in union_nms(ss, params)]


def _flatten_records(sample_sets, per_image: list[list[dict]]) -> list[dict]:
    return [{"image_id": ss.image_id, **r} for ss, recs in zip(sample_sets, per_image) for r in recs]


# commands ----------------------------------------------------------------------------


def cmd_confmask(args) -> int:
    sample_sets = load_samples(args.samples)
    params = ConfidenceParams(p=args.p, score_floor=args.score_floor, max_outputs=args.max_outputs)
    per_image = _ordered_map(_confmask_one, [(ss, params) for ss in sample_sets], args.jobs)
    records = _flatten_records(sample_sets, per_image)
    write_json(args.out, records)
    log.info("wrote %d confidence masks for %d images to %s", len(records), len(sample_sets), args.out)
    return 0


def cmd_union_nms(args) -> int:
    sample_sets = load_samples(args.samples)
    params = NmsParams(tau=args.tau, class_aware=not args.class_agnostic)
    per_image = _ordered_map(_union_nms_one, [(ss, params) for ss in sample_sets], args.jobs)
    records = _flatten_records(sample_sets, per_image)
    write_json(args.out, records)
    log.info("wrote %d union-NMS predictions to %s", len(records), args.out)
    return 0


def cmd_mode(args) -> int:
    sample_sets = load_samples(args.samples)
    missing = [f"record {r} (image {ss.image_id!r}): no mode hypothesis" for r, ss in enumerate(sample_sets) if ss.mode is None]
    if missing:
        raise ValidationError(missing, str(args.samples))
    records = [{"image_id": ss.image_id, **instance_to_json(i)} for ss in sample_sets for i in ss.mode.instances]
    write_json(args.out, records)
    return 0


def cmd_eval(args) -> int:
    from . import plots

    images, preds = _load_aligned(args.gt, args.pred)
    report = evaluate(
        preds,
        images,
        metrics=tuple(args.metric or ("map", "ar", "ar-iog", "mrhp")),
        p_grid=args.p_grid,
        tau_grid=args.tau_grid,
        class_aware=not args.class_agnostic,
    )
    stem = _stem(args.report)
    doc = report.to_json()
    doc["parameters"] = {"metrics": list(args.metric or ()), "p_grid": list(args.p_grid), "tau_grid": list(args.tau_grid)}
    write_json(_with_suffix(stem, ".json"), doc)
    _write_csv(_with_suffix(stem, ".csv"), report.CSV_HEADER, report.to_rows())
    if args.svg:
        plots.pr_curves(report.pr_curves, _with_suffix(stem, "_pr.svg"))
        iops = {"predictions": [float(v) for p, g in zip(preds, images) for v in best_overlaps(p, g, "iop")]}
        plots.iop_quantiles(iops, _with_suffix(stem, "_iop.svg"))
    _emit(report.scalars())
    return 0


def cmd_picksim(args) -> int:
    from . import plots

    images = load_ground_truth(args.gt)
    config = PickSimConfig(radius=args.radius, n_probes=args.probes, seed=args.seed)
    gt_area = sum(i.mask.area for img in images for i in img.instances)
    results = []
    for label, path in zip(_labels(args.pred), args.pred):
        preds = align_predictions(load_predictions(path), images)
        res = estimate_dataset(preds, images, config)
        pred_area = sum(i.mask.area for p in preds for i in p)
        row = {"predictions": label, **res.to_json(), "pickable_area": pred_area / gt_area if gt_area else None}
        results.append(row)
        _emit(row)
    header = ("predictions", "rate", "D", "N", "stderr", "pickable_area", "radius", "probes", "seed")
    rows = [
        tuple("" if r[k] is None else r[k] for k in header[:6]) + (args.radius, args.probes, args.seed)
        for r in results
    ]
    if args.report:
        stem = _stem(args.report)
        write_json(_with_suffix(stem, ".json"), {"radius": args.radius, "probes": args.probes, "seed": args.seed, "results": results})
        _write_csv(_with_suffix(stem, ".csv"), header, rows)
        if args.svg:
            plots.double_pick_tradeoff(
                [(r["predictions"], r["pickable_area"], r["rate"]) for r in results],
                _with_suffix(stem, "_tradeoff.svg"),
            )
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return 0


def _load_spec(path: str) -> SceneSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError([f"malformed JSON: {exc}"], path) from exc
    if not isinstance(doc, dict):
        raise SchemaError(["scene spec must be a JSON object"], path)
    try:
        return SceneSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError([str(exc)], path) from exc


def _mixture_record(scene) -> dict:
    return {
        "image_id": scene.image_id,
        "weights": [str(w) for w in scene.weights],
        "realized": scene.realized,
        "mode": scene.mode_index,
        "components": [[instance_to_json(i) for i in gt.instances] for _, gt in scene.components],
    }


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec)
    scenes, sample_sets = [], []
    for scene_seed, draw_seed in trial_seeds(args.seed, args.scenes):
        scene = generate_scene(spec, scene_seed)
        scenes.append(scene)
        sample_sets.append(sample_hypotheses(scene, args.k, draw_seed))
    out = Path(args.out_dir)
    write_json(out / "gt.json", ground_truth_to_json([s.ground_truth for s in scenes]))
    write_json(out / "samples.json", samples_to_json(sample_sets))
    write_json(
        out / "mixture.json",
        {"spec": spec.to_dict(), "k": args.k, "seed": args.seed, "scenes": [_mixture_record(s) for s in scenes]},
    )
    log.info("wrote %d scenes to %s", len(scenes), out)
    return 0


def cmd_calibrate(args) -> int:
    from . import plots

    images = load_ground_truth(args.gt)
    labels = _labels(args.pred)
    buckets = {label: align_predictions(load_predictions(path), images) for label, path in zip(labels, args.pred)}
    exceed = iop_exceedance(buckets, images, args.iop_cut)
    aucs = {label: calibration_auc(preds, images, args.iou_cut) for label, preds in buckets.items()}
    doc = {"iou_cut": args.iou_cut, "iop_cut": args.iop_cut, "roc_auc": aucs, "iop_exceedance": exceed}
    _emit(doc)
    if args.report:
        stem = _stem(args.report)
        write_json(_with_suffix(stem, ".json"), doc)
        _write_csv(
            _with_suffix(stem, ".csv"),
            ("predictions", "roc_auc", "iop_exceedance"),
            [(lb, "" if aucs[lb] is None else aucs[lb], "" if exceed[lb] is None else exceed[lb]) for lb in labels],
        )
        if args.svg:
            iops = {
                lb: [float(v) for p, g in zip(preds, images) for v in best_overlaps(p, g, "iop")]
                for lb, preds in buckets.items()
            }
            plots.iop_quantiles(iops, _with_suffix(stem, "_iop.svg"), cut=args.iop_cut)
            pairs = {}
            for lb, preds in buckets.items():
                scores = [s for s, _ in calibration_pairs(preds, images, args.iou_cut)]
                ious = [float(v) for p, g in zip(preds, images) for v in best_overlaps(p, g, "iou")]
                pairs[lb] = list(zip(scores, ious))
            plots.score_vs_iou(pairs, _with_suffix(stem, "_calibration.svg"))
    return 0


def cmd_verify_guarantee(args) -> int:
    spec = _load_spec(args.spec)
    report = verify_guarantee(spec, args.k, args.p, args.trials, args.seed, slack=args.slack)
    doc = report.to_json()
    doc["seed"] = args.seed
    _emit(doc)
    if args.report:
        write_json(_with_suffix(_stem(args.report), ".json"), doc)
    for v in report.structural_violations[:20]:
        log.error("%s", v)
    return 0 if report.passed else 1


# parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbosity", choices=("error", "warning", "info", "debug"), default="warning")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for per-image work")

    parser = argparse.ArgumentParser(prog="distseg", description="Distributional instance segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("confmask", parents=[common], help="extract p-confidence masks from sample sets")
    p.add_argument("--samples", required=True)
    p.add_argument("--p", type=_unit(True, False), required=True)
    p.add_argument("--score-floor", type=_unit(False, False), default=0.1)
    p.add_argument("--max-outputs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_confmask)

    p = sub.add_parser("union-nms", parents=[common], help="Union-NMS over all samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--tau", type=_unit(True, True), default=0.5)
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_union_nms)

    p = sub.add_parser("mode", parents=[common], help="emit the point-estimate hypothesis")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mode)

    p = sub.add_parser("eval", parents=[common], help="mAP, AR, AR-IoG and MR@HP")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metric", action="append", choices=("map", "ar", "ar-iog", "mrhp"))
    p.add_argument("--p-grid", type=_unit(True, False), nargs="+", default=list(MRHP_GRID))
    p.add_argument("--tau-grid", type=_unit(True, False), nargs="+", default=list(MRHP_GRID))
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--report", required=True, help="output stem; writes STEM.json and STEM.csv")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("picksim", parents=[common], help="simulated double-pick rate")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--radius", type=_radius, default=8)
    p.add_argument("--probes", type=_positive_int, default=100_000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--report")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_picksim)

    p = sub.add_parser("synth", parents=[common], help="generate oracle scenes and samples")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--scenes", type=_positive_int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[common], help="score calibration AUC and IoP exceedance")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--iou-cut", type=_unit(False, False), default=0.5)
    p.add_argument("--iop-cut", type=_unit(False, False), default=0.95)
    p.add_argument("--report")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify-guarantee", parents=[common], help="check confidence-mask containment on synthetic scenes")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--p", type=_unit(True, False), required=True)
    p.add_argument("--trials", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--slack", type=_unit(False, True), default=0.05)
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify_guarantee)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.verbosity.upper(), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "svg", False) and getattr(args, "report", None) is None:
        parser.error("--svg needs --report")
    try:
        return args.func(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"validation: {v}", file=sys.stderr)
        return 1
    except SchemaError as exc:
        for v in exc.problems:
            print(f"schema: {v}", file=sys.stderr)
        return 2
    except (MalformedMaskError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
