"""
Scoring detections
==================

Evaluate the committed three-image fixture at several IoU thresholds and
look at one precision-recall curve point by point.
"""

from pathlib import Path

from sssdet.evaluation import EvalConfig, average_precision, evaluate, load_detections, load_truths, match

fixture = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "eval3"

report = evaluate(fixture / "gt", fixture / "det", EvalConfig((0.3, 0.5, 0.7), ("car", "plane")))
print(report.to_text())

# Ranked TP/FP labels for class 0 at IoU 0.5, and the cumulative table
# behind its 11-point AP.
labeled, counts = match(load_detections(fixture / "det"), load_truths(fixture / "gt"), 0.5)
rows = labeled[0]
ap, curve = average_precision([tp for _, tp, _, _ in rows], counts[0])
for (score, tp, img, _), r, p in zip(rows, curve.recall, curve.precision):
    print(f"{score:.2f} {img}  {'TP' if tp else 'FP'}  recall {r:.2f}  precision {p:.2f}")
print(f"AP {ap:.4f}")
