"""VOC-style detection evaluation: matching, 11-point AP, mAP, PR curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .inference import iou
from .training import GroundTruthBox, read_labels


@dataclass(frozen=True)
class EvalDetection:
    class_id: int
    score: float
    cx: float
    cy: float
    w: float
    h: float

    @property
    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = (0.5,)
    class_names: tuple | None = None
    method: str = "11point"

    def __post_init__(self):
        if isinstance(self.iou_thresholds, (int, float)):
            object.__setattr__(self, "iou_thresholds", (float(self.iou_thresholds),))
        if not self.iou_thresholds or any(not 0 < t <= 1 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if self.method not in ("11point", "all"):
            raise ValueError(f"unknown AP method {self.method!r}")


@dataclass
class PRCurve:
    class_id: int
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    num_truths: int
    num_detections: int


@dataclass
class EvalReport:
    """Per-threshold curves and mAP; ``curves[thr][class_id]`` is a :class:`PRCurve`."""

    curves: dict = field(default_factory=dict)
    mAP: dict = field(default_factory=dict)
    class_names: tuple = ()

    def ap(self, threshold, class_id):
        return self.curves[threshold][class_id].ap

    def to_text(self):
        lines = []
        for thr in sorted(self.curves):
            lines.append(f"IoU threshold {thr:g}")
            lines.append(f"  {'class':<16} {'truths':>7} {'dets':>6} {'AP':>8}")
            for cid, c in sorted(self.curves[thr].items()):
                name = self.class_names[cid] if cid < len(self.class_names) else str(cid)
                lines.append(f"  {name:<16} {c.num_truths:>7} {c.num_detections:>6} {c.ap:>8.4f}")
            lines.append(f"  mAP {self.mAP[thr]:.4f}")
        return "\n".join(lines) + "\n"


def parse_detections(text, source="<detections>"):
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"{source}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            dets.append(EvalDetection(int(parts[0]), *(float(v) for v in parts[1:])))
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric field in {line!r}") from None
    return dets


def match(dets, truths, iou_threshold=0.5):
    """Label every detection TP or FP.

    ``dets`` and ``truths`` map image id to lists.  Per class, detections
    are visited by descending score (ties: image id, then position in the
    image's list); each takes the highest-IoU still-unmatched truth of its
    class in the same image, and is a TP when that IoU reaches the threshold.

    Returns ``(labeled, truth_counts)`` where ``labeled[class_id]`` is the
    ordered list of ``(score, is_tp, image_id, det_index)``.
    """
    unknown = sorted(set(dets) - set(truths))
    if unknown:
        raise DataError(f"detections for images without ground truth: {', '.join(map(str, unknown))}")
    counts = {}
    for boxes in truths.values():
        for t in boxes:
            counts[t.class_id] = counts.get(t.class_id, 0) + 1

    order = sorted(
        ((d.class_id, -d.score, img, j) for img, ds in dets.items() for j, d in enumerate(ds)),
    )
    used = {img: [False] * len(ts) for img, ts in truths.items()}
    labeled = {}
    for cid, neg_score, img, j in order:
        d = dets[img][j]
        best, best_k = -1.0, None
        for k, t in enumerate(truths[img]):
            if t.class_id != cid or used[img][k]:
                continue
            o = iou(d.corners, t.corners)
            if o > best:
                best, best_k = o, k
        tp = best_k is not None and best >= iou_threshold
        if tp:
            used[img][best_k] = True
        labeled.setdefault(cid, []).append((-neg_score, tp, img, j))
    return labeled, counts


def pr_points(is_tp, num_truths):
    """Cumulative ``(recall, precision)`` arrays along the ranked list."""
    tp = np.cumsum(np.asarray(is_tp, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(is_tp, dtype=float))
    precision = tp / np.maximum(tp + fp, np.finfo(float).eps)
    recall = tp / num_truths if num_truths > 0 else np.zeros_like(tp)
    return recall, precision


def average_precision(is_tp, num_truths, method="11point", class_id=-1):
    """AP of a ranked TP/FP list.

    ``"11point"`` averages, over recall levels 0, 0.1, ..., 1, the maximum
    precision attained at recall >= level.  ``"all"`` integrates the
    precision envelope over every recall step.
    Returns ``(ap, PRCurve)``.
    """
    is_tp = list(is_tp)
    recall, precision = pr_points(is_tp, num_truths)
    curve = PRCurve(class_id, recall, precision, 0.0, num_truths, len(is_tp))
    if num_truths == 0 or not is_tp:
        return 0.0, curve
    if method == "11point":
        ap = 0.0
        for level in np.linspace(0, 1, 11):
            mask = recall >= level - 1e-12
            ap += precision[mask].max() if mask.any() else 0.0
        ap /= 11
    else:
        r = np.concatenate([[0.0], recall, [1.0]])
        p = np.concatenate([[0.0], precision, [0.0]])
        p = np.maximum.accumulate(p[::-1])[::-1]
        steps = np.nonzero(r[1:] != r[:-1])[0]
        ap = float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1]))
    curve.ap = float(ap)
    return float(ap), curve


def evaluate_sets(dets, truths, config=None):
    """Evaluate in-memory detections against truths (both keyed by image id)."""
    config = config or EvalConfig()
    classes = set()
    for ts in truths.values():
        classes.update(t.class_id for t in ts)
    for ds in dets.values():
        classes.update(d.class_id for d in ds)
    if config.class_names:
        classes.update(range(len(config.class_names)))
    report = EvalReport(class_names=tuple(config.class_names or ()))
    for thr in config.iou_thresholds:
        labeled, counts = match(dets, truths, thr)
        curves = {}
        for cid in sorted(classes):
            rows = labeled.get(cid, [])
            n = counts.get(cid, 0)
            if n == 0 and not rows:
                continue
            _, curve = average_precision([r[1] for r in rows], n, config.method, class_id=cid)
            curves[cid] = curve
        scored = [c.ap for c in curves.values() if c.num_truths > 0]
        report.curves[thr] = curves
        report.mAP[thr] = float(np.mean(scored)) if scored else 0.0
    return report


def load_truths(gt_dir):
    gt_dir = Path(gt_dir)
    files = sorted(gt_dir.glob("*.txt"))
    if not files:
        raise DataError(f"{gt_dir}: no ground-truth label files")
    return {f.stem: read_labels(f) for f in files}


def load_detections(det_dir):
    det_dir = Path(det_dir)
    return {f.stem: parse_detections(f.read_text(), source=str(f)) for f in sorted(det_dir.glob("*.txt"))}


def write_curves(report, out_dir):
    """One ``recall,precision`` CSV per (class, threshold); returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for thr, curves in sorted(report.curves.items()):
        for cid, c in sorted(curves.items()):
            name = report.class_names[cid] if cid < len(report.class_names) else str(cid)
            path = out_dir / f"pr_{name}_iou{thr:g}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["recall", "precision"])
                for r, p in zip(c.recall, c.precision):
                    w.writerow([f"{r:.6f}", f"{p:.6f}"])
            paths.append(path)
    return paths


def evaluate(gt_dir, det_dir, config=None, out_dir=None):
    """Evaluate a directory of label files against a directory of detection files.

    Files pair up by stem; a ground-truth image with no detection file has
    no detections.
    """
    report = evaluate_sets(load_detections(det_dir), load_truths(gt_dir), config)
    if out_dir is not None:
        write_curves(report, out_dir)
    return report


__all__ = [
    "EvalConfig", "EvalDetection", "EvalReport", "GroundTruthBox", "PRCurve",
    "average_precision", "evaluate", "evaluate_sets", "match", "parse_detections",
]
