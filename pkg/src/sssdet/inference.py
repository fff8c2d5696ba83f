"""Image ingestion, region-head decoding, NMS and the detect pipeline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import network
from .errors import DataError
from .tensor import DTYPE, sigmoid, softmax

# --------------------------------------------------------------------------
# images


def _ppm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataError("PPM header ends early")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def read_ppm(path):
    """Binary P6 PPM with maxval 255 -> uint8 array ``(H, W, 3)``."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    try:
        tokens, offset = _ppm_tokens(data, 3)
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported PPM maxval {maxval} (only 255)")
    if width < 1 or height < 1:
        raise DataError(f"{path}: invalid PPM size {width}x{height}")
    need = width * height * 3
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise DataError(f"{path}: PPM raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_image(path):
    """Load a PPM or ``.npy`` image as planar float32 RGB ``(3, H, W)`` in [0, 1].

    ``.npy`` files must already hold a ``(3, H, W)`` float array.
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(DTYPE)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise DataError(f"{path}: raw tensor must have shape (3, H, W), got {arr.shape}")
        return arr
    return (read_ppm(path).transpose(2, 0, 1).astype(DTYPE) / DTYPE(255))


def _resize_axis(img, out_len, axis):
    in_len = img.shape[axis]
    if in_len == out_len:
        return img
    # half-pixel centres, edge-clamped
    pos = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    pos = np.clip(pos, 0, in_len - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, in_len - 1)
    frac = (pos - lo).astype(DTYPE)
    shape = [1] * img.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    a = np.take(img, lo, axis=axis)
    b = np.take(img, hi, axis=axis)
    return a + (b - a) * frac


def resize_bilinear(img, width, height):
    """Stretch a planar ``(C, H, W)`` image to ``(C, height, width)``."""
    out = _resize_axis(img, height, 1)
    return _resize_axis(out, width, 2).astype(DTYPE)


def load_and_resize(path, width=608, height=608):
    """Image file -> network input tensor ``(1, 3, height, width)``."""
    return resize_bilinear(read_image(path), width, height)[None]


# --------------------------------------------------------------------------
# head decoding


@dataclass(frozen=True)
class RawPrediction:
    """Head output of one image viewed as ``(anchor, field, S, S)``.

    Fields per anchor are ``tx, ty, tw, th, to`` then the class scores.
    """

    head: np.ndarray
    num_anchors: int
    classes: int

    def __post_init__(self):
        depth = self.num_anchors * (5 + self.classes)
        if self.head.ndim != 3 or self.head.shape[0] != depth:
            raise DataError(f"head shape {self.head.shape} incompatible with depth {depth}")

    @property
    def grid(self):
        return self.head.shape[1]

    @property
    def fields(self):
        s = self.head.shape
        return self.head.reshape(self.num_anchors, 5 + self.classes, s[1], s[2])


def forward(defn, params, x):
    """Inference forward pass; returns one :class:`RawPrediction` per image."""
    out = network.run(defn, params, x, mode="infer")
    r = defn.region
    return [RawPrediction(h, r.num_anchors, r.classes) for h in out]


@dataclass(frozen=True)
class Detection:
    class_id: int
    x: float
    y: float
    w: float
    h: float
    objectness: float
    class_confidence: float
    cell: int = 0
    anchor: int = 0

    @property
    def score(self):
        return self.objectness * self.class_confidence

    @property
    def corners(self):
        return (self.x, self.y, self.x + self.w, self.y + self.h)


def decode_boxes(raw, anchors):
    """Normalized centre-form boxes ``(A, S, S, 4)`` for every anchor."""
    f = raw.fields
    s = raw.grid
    anchors = np.asarray(anchors, dtype=np.float64)
    gy, gx = np.mgrid[0:s, 0:s]
    bx = (gx + sigmoid(f[:, 0].astype(np.float64))) / s
    by = (gy + sigmoid(f[:, 1].astype(np.float64))) / s
    bw = anchors[:, 0, None, None] * np.exp(f[:, 2].astype(np.float64)) / s
    bh = anchors[:, 1, None, None] * np.exp(f[:, 3].astype(np.float64)) / s
    return np.stack([bx, by, bw, bh], axis=-1)


def decode(raw, anchors, img_w, img_h, conf_threshold=0.25):
    """Turn one head output into thresholded detections in image pixels.

    Each anchor yields at most one detection, for its most probable class.
    Output order is by grid index (row-major), then anchor.
    """
    f = raw.fields
    s = raw.grid
    boxes = decode_boxes(raw, anchors)
    obj = sigmoid(f[:, 4].astype(np.float64))
    probs = softmax(f[:, 5:].astype(np.float64), axis=1)
    cls = probs.argmax(axis=1)
    conf = np.take_along_axis(probs, cls[:, None], axis=1)[:, 0]
    score = obj * conf
    dets = []
    # iterate cells-major so output respects the tie-break order
    a_idx, gy, gx = np.nonzero(score >= conf_threshold)
    order = np.lexsort((a_idx, gy * s + gx))
    for j in order:
        a, y, x = a_idx[j], gy[j], gx[j]
        cx, cy, w, h = boxes[a, y, x]
        x0 = max(0.0, (cx - w / 2) * img_w)
        y0 = max(0.0, (cy - h / 2) * img_h)
        x1 = min(float(img_w), (cx + w / 2) * img_w)
        y1 = min(float(img_h), (cy + h / 2) * img_h)
        if x1 <= x0 or y1 <= y0:
            continue
        dets.append(Detection(int(cls[a, y, x]), x0, y0, x1 - x0, y1 - y0,
                              float(obj[a, y, x]), float(conf[a, y, x]),
                              cell=int(y * s + x), anchor=int(a)))
    return dets


# --------------------------------------------------------------------------
# overlap and suppression


def iou(a, b):
    """IoU of two corner-form boxes ``(x1, y1, x2, y2)``."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a, b):
    """Pairwise IoU between corner-form box arrays ``(n, 4)`` and ``(m, 4)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
    return out


def center_to_corners(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:4] / 2
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def nms(dets, iou_threshold=0.6):
    """Greedy per-class suppression.

    Within a class, detections are visited by descending score (ties: lower
    grid index, then lower anchor index) and dropped when their IoU with an
    already kept box exceeds ``iou_threshold``.
    """
    keep = []
    for c in sorted({d.class_id for d in dets}):
        group = sorted((d for d in dets if d.class_id == c),
                       key=lambda d: (-d.score, d.cell, d.anchor))
        kept = []
        for d in group:
            if all(iou(d.corners, k.corners) <= iou_threshold for k in kept):
                kept.append(d)
        keep.extend(kept)
    keep.sort(key=lambda d: (-d.score, d.cell, d.anchor, d.class_id))
    return keep


def detect(image, defn, params, conf_threshold=0.25, nms_threshold=0.6):
    """Full pipeline on one image path; boxes come back in original pixels."""
    img = read_image(image)
    _, h, w = img.shape
    x = resize_bilinear(img, defn.net.width, defn.net.height)[None]
    raw = forward(defn, params, x)[0]
    dets = decode(raw, defn.region.anchors, w, h, conf_threshold)
    return nms(dets, nms_threshold)


# --------------------------------------------------------------------------
# output formats


def format_detections(dets, names=None):
    """``class_name score x_min y_min width height``, one per line."""
    lines = []
    for d in dets:
        name = names[d.class_id] if names else str(d.class_id)
        lines.append(f"{name} {d.score:.2f} {d.x:.2f} {d.y:.2f} {d.w:.2f} {d.h:.2f}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_records(path, dets, names=None):
    """JSON-lines records with the same fields as :func:`format_detections`."""
    with open(path, "w") as fh:
        for d in dets:
            rec = asdict(d)
            rec["score"] = d.score
            rec["class_name"] = names[d.class_id] if names else str(d.class_id)
            fh.write(json.dumps(rec) + "\n")


def write_eval_detections(path, dets, img_w, img_h):
    """Normalized ``class_id score cx cy w h`` lines for the evaluator."""
    with open(path, "w") as fh:
        for d in dets:
            cx = (d.x + d.w / 2) / img_w
            cy = (d.y + d.h / 2) / img_h
            fh.write(f"{d.class_id} {d.score:.6f} {cx:.6f} {cy:.6f} {d.w / img_w:.6f} {d.h / img_h:.6f}\n")
