"""ROC curves over occupied cells, pixel metrics, orientation error, plots.

All pixel counting is restricted to occupied cells so the large static
background cannot mask the quality of the moving/non-moving decision. The
threshold sweep uses every distinct score when there are few, otherwise an
even grid over the score range, and always includes the two endpoint
operating points (0,0) and (1,1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_THRESHOLDS = 512


@dataclass
class RocCurve:
    points: list            # [(threshold, tpr, fpr)], threshold ascending
    auc: float              # NaN when degenerate
    degenerate: bool = False

    def tpr_at_fpr(self, max_fpr: float) -> float:
        """Highest TPR among operating points with FPR <= max_fpr."""
        best = 0.0
        for _, tpr, fpr in self.points:
            if fpr <= max_fpr:
                best = max(best, tpr)
        return best

    def youden_threshold(self) -> float:
        """Threshold maximizing TPR - FPR."""
        best = max(self.points, key=lambda p: p[1] - p[2])
        return best[0]


@dataclass
class PixelMetrics:
    accuracy: float
    precision: float
    recall: float
    defined: bool = True


@dataclass
class OrientationReport:
    mean_error: float          # signed wrapped mean, radians
    mean_abs_error: float
    error_std: float
    errors: list = field(default_factory=list)
    false_positives: int = 0
    matched: int = 0


def roc(scores: np.ndarray, truth: np.ndarray, occupied_mask: np.ndarray,
        n_thresholds: int = N_THRESHOLDS) -> RocCurve:
    """Threshold-sweep ROC restricted to occupied cells.

    A cell is predicted positive when its score is >= the threshold, so TPR
    and FPR are non-increasing in the threshold.
    """
    if scores.shape != truth.shape or scores.shape != occupied_mask.shape:
        raise ValueError("scores, truth and occupancy must share a shape")
    s = scores[occupied_mask].astype(np.float64)
    t = truth[occupied_mask].astype(bool)
    n_pos = int(t.sum())
    n_neg = int(t.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return RocCurve(points=[], auc=math.nan, degenerate=True)

    distinct = np.unique(s)
    if len(distinct) <= n_thresholds:
        thresholds = distinct
    else:
        thresholds = np.linspace(distinct[0], distinct[-1], n_thresholds)
    span = max(distinct[-1] - distinct[0], 1.0)
    thresholds = np.concatenate([[distinct[0] - 1e-3 * span], thresholds,
                                 [distinct[-1] + 1e-3 * span]])

    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_cum = np.concatenate([[0], np.cumsum(t[order])])
    points = []
    for thr in thresholds:
        # predictions: score >= thr; count via sorted prefix sums
        i = np.searchsorted(s_sorted, thr, side="left")
        tp = n_pos - pos_cum[i]
        fp = (len(s_sorted) - i) - tp
        points.append((float(thr), float(tp / n_pos), float(fp / n_neg)))
    auc = _trapezoid_auc(points)
    return RocCurve(points=points, auc=auc)


def _trapezoid_auc(points) -> float:
    by_fpr = sorted((fpr, tpr) for _, tpr, fpr in points)
    xs = [p[0] for p in by_fpr]
    ys = [p[1] for p in by_fpr]
    auc = 0.0
    for i in range(1, len(xs)):
        auc += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0
    return auc


def roc_brute_force(scores, truth, occupied_mask, thresholds) -> list:
    """Per-threshold confusion counting by explicit iteration (oracle)."""
    points = []
    s = scores[occupied_mask]
    t = truth[occupied_mask].astype(bool)
    n_pos = int(t.sum())
    n_neg = int((~t).sum())
    for thr in thresholds:
        tp = fp = 0
        for si, ti in zip(s.ravel(), t.ravel()):
            if si >= thr:
                if ti:
                    tp += 1
                else:
                    fp += 1
        points.append((float(thr), tp / n_pos, fp / n_neg))
    return points


def pixel_metrics(pred_mask: np.ndarray, truth: np.ndarray,
                  occupied_mask: np.ndarray) -> PixelMetrics:
    """Accuracy/precision/recall over occupied cells; NaN when undefined."""
    if pred_mask.shape != truth.shape or pred_mask.shape != occupied_mask.shape:
        raise ValueError("shape mismatch")
    p = pred_mask[occupied_mask].astype(bool)
    t = truth[occupied_mask].astype(bool)
    if p.size == 0:
        return PixelMetrics(math.nan, math.nan, math.nan, defined=False)
    tp = int(np.sum(p & t))
    acc = float(np.mean(p == t))
    prec = tp / int(p.sum()) if p.sum() else math.nan
    rec = tp / int(t.sum()) if t.sum() else math.nan
    return PixelMetrics(acc, prec, rec)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.arctan2(np.sin(a), np.cos(a))
    return float(out) if np.ndim(out) == 0 else out


def orientation_error(extracted: list, truth_objects: list,
                      min_iou: float = 0.1) -> OrientationReport:
    """Wrapped angular errors of extracted cluster headings vs matched truth.

    `extracted`: [(cell set, heading)], `truth_objects`: [(cell set, heading)].
    Matching greedily pairs clusters with the truth object of maximal cell
    overlap (IoU >= min_iou); unmatched extractions count as false positives.
    """
    ex = [(frozenset(map(tuple, cells)), h) for cells, h in extracted]
    gt = [(frozenset(map(tuple, cells)), h) for cells, h in truth_objects]
    pairs = []
    for i, (ec, _) in enumerate(ex):
        for j, (tc, _) in enumerate(gt):
            inter = len(ec & tc)
            if inter == 0:
                continue
            iou = inter / len(ec | tc)
            if iou >= min_iou:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_e, used_t = set(), set()
    errors = []
    for iou, i, j in pairs:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        if math.isnan(ex[i][1]) or math.isnan(gt[j][1]):
            continue
        errors.append(wrap_angle(ex[i][1] - gt[j][1]))
    fp = len(ex) - len(used_e)
    if not errors:
        return OrientationReport(math.nan, math.nan, math.nan, [], fp, 0)
    arr = np.asarray(errors)
    return OrientationReport(float(arr.mean()), float(np.abs(arr).mean()),
                             float(arr.std()), errors, fp, len(errors))


def rotation_sweep(net, frame, step_deg: int = 10):
    """Evaluate a trained net on every rotation of one frame.

    Returns [(angle, accuracy, precision, recall)] for angles 0..350.
    """
    from .encode import network_input, rotate_augment

    rows = []
    for angle in range(0, 360, step_deg):
        rotated = rotate_augment(frame, angle)
        out = net.predict(network_input(rotated, dtype=np.dtype(net.dtype)))
        m = pixel_metrics(out["pred"] == 1, rotated.labels == 1,
                          rotated.occupied_mask)
        rows.append((angle, m.accuracy, m.precision, m.recall))
    return rows


def metric_spread(rows) -> dict:
    """Max minus min of each metric across the sweep rows (NaN-tolerant)."""
    arr = np.asarray([[r[1], r[2], r[3]] for r in rows], dtype=np.float64)
    out = {}
    for i, name in enumerate(("accuracy", "precision", "recall")):
        col = arr[:, i]
        finite = col[np.isfinite(col)]
        out[name] = float(finite.max() - finite.min()) if finite.size else math.nan
    return out


# -- artifact emission ----------------------------------------------------------------


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("threshold,fpr,tpr\n")
        for thr, tpr, fpr in curve.points:
            fh.write(f"{thr!r},{fpr!r},{tpr!r}\n")


def read_roc_csv(path) -> RocCurve:
    lines = Path(path).read_text().splitlines()
    points = []
    for line in lines[1:]:
        thr, fpr, tpr = (float(v) for v in line.split(","))
        points.append((thr, tpr, fpr))
    return RocCurve(points=points, auc=_trapezoid_auc(points))


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("angle,acc,prec,rec\n")
        for angle, acc, prec, rec in rows:
            fh.write(f"{angle},{acc!r},{prec!r},{rec!r}\n")


def _svg_polyline(points, color, width=1.5):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
            f'points="{coords}" />')


def _svg_frame(title, w=480, h=360):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white" />',
        f'<text x="{w / 2:.0f}" y="16" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
        f'<rect x="50" y="30" width="{w - 70}" height="{h - 80}" fill="none" '
        f'stroke="black" stroke-width="1" />',
    ]


def plot_roc_svg(curve: RocCurve, path, title="ROC (occupied cells)") -> None:
    w, h = 480, 360
    x0, y0, pw, ph = 50, 30, w - 70, h - 80
    parts = _svg_frame(title, w, h)
    parts.append(_svg_polyline([(x0, y0 + ph), (x0 + pw, y0)], "#cc3333", 1.0))
    pts = sorted((fpr, tpr) for _, tpr, fpr in curve.points)
    line = [(x0 + fpr * pw, y0 + (1 - tpr) * ph) for fpr, tpr in pts]
    parts.append(_svg_polyline(line, "#2255cc", 2.0))
    parts.append(f'<text x="{x0 + 8}" y="{y0 + 18}" font-family="sans-serif" '
                 f'font-size="12">AUC = {curve.auc:.4f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def plot_series_svg(series: dict, path, title, x_label="x") -> None:
    """Plot named (x, y) series on a shared normalized axis box."""
    w, h = 480, 360
    x0, y0, pw, ph = 50, 30, w - 70, h - 80
    colors = ["#2255cc", "#cc3333", "#22aa55", "#aa7722", "#7744aa"]
    parts = _svg_frame(title, w, h)
    xs_all = [x for pts in series.values() for x, _ in pts]
    ys_all = [y for pts in series.values() for _, y in pts
              if not math.isnan(y)]
    if not xs_all or not ys_all:
        parts.append("</svg>")
        Path(path).write_text("\n".join(parts) + "\n")
        return
    xmin, xmax = min(xs_all), max(xs_all)
    ymin, ymax = min(ys_all), max(ys_all)
    xspan = (xmax - xmin) or 1.0
    yspan = (ymax - ymin) or 1.0
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = colors[i % len(colors)]
        line = [(x0 + (x - xmin) / xspan * pw, y0 + (1 - (y - ymin) / yspan) * ph)
                for x, y in pts if not math.isnan(y)]
        if line:
            parts.append(_svg_polyline(line, color))
        parts.append(f'<text x="{x0 + 8}" y="{y0 + 18 + 14 * i}" fill="{color}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append(f'<text x="{w / 2:.0f}" y="{h - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11">{x_label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
