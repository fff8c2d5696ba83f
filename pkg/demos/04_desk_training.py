"""
Training from scratch at desk scale
===================================

Train the quarter-width 160x160 model on ten synthetic scenes of solid
rectangles, then detect on one of them.  500 iterations take a minute or
two on one CPU core; pass a smaller count as the first argument to try it
faster.
"""

import sys
import tempfile
from pathlib import Path

from sssdet.inference import detect, format_detections, iou
from sssdet.netdef import reference_config
from sssdet.synthetic import write_dataset
from sssdet.tensor import thread_limit
from sssdet.training import TrainConfig, label_path, read_labels, read_manifest, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 500
names = ["car", "heavy_vehicle", "plane", "boat"]
defn = reference_config("sssdet-desk.cfg")
work = Path(tempfile.mkdtemp(prefix="sssdet-desk-"))

# Ten 160x160 PPM scenes with sibling label files and a manifest.
manifest = write_dataset(work / "rects", count=10, size=160, seed=0)

config = TrainConfig.from_netdef(defn, max_iterations=iterations)
with thread_limit(1):
    result = train(manifest, defn, config, seed=0, out_dir=work / "run")

# Print the loss curve coarsely.
running = None
for it, lr, loss in result.log:
    running = loss if running is None else 0.9 * running + 0.1 * loss
    if it in (1, 10) or it % 100 == 0:
        print(f"iter {it:4d}  lr {lr:.5f}  loss {loss:8.3f}  running {running:8.3f}")

image = read_manifest(manifest)[0]
dets = detect(image, defn, result.params)
print(format_detections(dets, names))
for t in read_labels(label_path(image)):
    gt = tuple(v * 160 for v in t.corners)
    best = max((iou(d.corners, gt) for d in dets if d.class_id == t.class_id), default=0.0)
    print(f"truth {names[t.class_id]:<14} best IoU {best:.2f}")
print("weights and loss log in", work / "run")
