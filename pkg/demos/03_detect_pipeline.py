"""
From pixels to detections
=========================

Build a head tensor by hand, decode it into boxes and watch per-class
non-maximum suppression keep the best of each overlapping group.
"""

import numpy as np

from sssdet.inference import RawPrediction, decode, format_detections, nms

anchors = ((1.2, 1.7), (2.5, 4.0), (5.0, 6.5), (9.0, 10.0))
names = ["car", "heavy_vehicle", "plane", "boat"]
s = 8

# Start from confident background everywhere.
head = np.full((4 * 9, s, s), -8.0, np.float32)
f = head.reshape(4, 9, s, s)

# Two neighbouring cells both claim the same car with anchor 1, and a
# plane sits on top of it with anchor 2.
for gx, conf in ((3, 4.0), (4, 2.0)):
    f[1, 0:4, 2, gx] = (0.8 if gx == 3 else -0.8, 0.0, 0.1, 0.0)
    f[1, 4, 2, gx] = conf
    f[1, 5:, 2, gx] = (6, 0, 0, 0)
f[2, 0:5, 2, 3] = (0.0, 0.0, 0.0, 0.0, 3.0)
f[2, 5:, 2, 3] = (0, 0, 6, 0)

raw = RawPrediction(head, num_anchors=4, classes=4)
dets = decode(raw, anchors, img_w=640, img_h=640, conf_threshold=0.25)
print("before NMS")
print(format_detections(dets, names))

# The weaker car overlaps the stronger one and goes; the plane is another
# class, so it stays even though it overlaps both.
print("after NMS at 0.6")
print(format_detections(nms(dets, 0.6), names))
