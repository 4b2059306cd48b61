"""Static figures for evaluation reports.

Figures are written with the Agg backend.  SVG output is byte-reproducible:
the creation date is dropped and element ids are salted with a fixed string.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "distseg",
    "svg.fonttype": "none",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def pr_curves(curves: Mapping[tuple, Sequence[tuple[float, float, float]]], path) -> Path:
    """Precision against recall, one line per (category, overlap, threshold)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for (cat, overlap, thr), pts in sorted(curves.items()):
            if not pts:
                continue
            rec = [p[2] for p in pts]
            prec = [p[1] for p in pts]
            ax.step(rec, prec, where="post", label=f"class {cat}, {overlap.upper()} {thr:g}")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if ax.lines:
            ax.legend(loc="lower left", frameon=False)
        return _save(fig, path)


def double_pick_tradeoff(rows: Sequence[tuple[str, float, float | None]], path) -> Path:
    """Double-pick rate against pickable-area fraction, one point per prediction set."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pts = [(label, area, rate) for label, area, rate in rows if rate is not None]
        if pts:
            xs = [p[1] for p in pts]
            ys = [100 * p[2] for p in pts]
            ax.plot(xs, ys, "o-", color="0.2")
            for label, x, y in zip((p[0] for p in pts), xs, ys):
                ax.annotate(label, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
        ax.set_xlabel("pickable area fraction")
        ax.set_ylabel("double pick rate (%)")
        return _save(fig, path)


def iop_quantiles(iops: Mapping[str, Sequence[float]], path, cut: float = 0.95) -> Path:
    """Quantile curves of best-GT IoP per prediction set."""
    qs = np.linspace(0, 1, 101)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, vals in iops.items():
            if len(vals):
                ax.plot(qs, np.quantile(np.asarray(vals, dtype=float), qs), label=label)
        ax.axhline(cut, color="0.5", linestyle=":", linewidth=0.8)
        ax.set_xlabel("quantile")
        ax.set_ylabel("IoP with best ground truth")
        ax.set_ylim(0, 1.02)
        if ax.lines[1:]:
            ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def score_vs_iou(pairs: Mapping[str, Sequence[tuple[float, float]]], path) -> Path:
    """Scatter of prediction score against best ground-truth IoU."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, pts in pairs.items():
            if pts:
                s, v = zip(*pts)
                ax.scatter(v, s, s=6, alpha=0.6, label=label)
        ax.set_xlabel("IoU with best ground truth")
        ax.set_ylabel("score")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        if pairs:
            ax.legend(loc="upper left", frameon=False)
        return _save(fig, path)
