"""Region loss, anchor assignment, SGD and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network
from .errors import DataError
from .inference import RawPrediction, center_to_corners, decode_boxes, iou_matrix, read_image, resize_bilinear
from .tensor import DTYPE, sigmoid, softmax
from .weights import init_weights, save_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def validate(self, index=None):
        where = "" if index is None else f" (truth {index})"
        if not (0 <= self.cx <= 1 and 0 <= self.cy <= 1):
            raise DataError(f"box centre ({self.cx}, {self.cy}) outside [0, 1]{where}")
        if not (0 < self.w <= 1 and 0 < self.h <= 1):
            raise DataError(f"box size ({self.w}, {self.h}) outside (0, 1]{where}")
        return self

    @property
    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


def parse_labels(text, source="<labels>"):
    """Darknet label lines ``class_id cx cy w h`` -> list of boxes."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{source}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            box = GroundTruthBox(int(parts[0]), *(float(v) for v in parts[1:]))
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric field in {line!r}") from None
        try:
            box.validate()
        except DataError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        boxes.append(box)
    return boxes


def read_labels(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: label file not found")
    return parse_labels(path.read_text(), source=str(path))


def label_path(image_path):
    return Path(image_path).with_suffix(".txt")


def read_manifest(path):
    path = Path(path)
    base = path.parent
    entries = [l.strip() for l in path.read_text().splitlines() if l.strip()]
    return [p if Path(p).is_absolute() else str(base / p) for p in entries]


# --------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 4
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_steps: tuple = (20000,)
    lr_scales: tuple = (0.1,)
    burn_in: int = 0
    burn_in_power: float = 4.0
    max_iterations: int = 50000
    coord_scale: float = 1.0
    object_scale: float = 5.0
    noobject_scale: float = 1.0
    class_scale: float = 1.0
    ignore_iou_threshold: float = 0.6
    checkpoint_every: int = 0

    def __post_init__(self):
        if min(self.coord_scale, self.object_scale, self.noobject_scale, self.class_scale) < 0:
            raise ValueError("loss scales must be >= 0")
        if any(not 0 < s < 1 for s in self.lr_scales):
            raise ValueError("learning-rate drop factors must lie in (0, 1)")
        if len(self.lr_steps) != len(self.lr_scales):
            raise ValueError("lr_steps and lr_scales differ in length")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @classmethod
    def from_netdef(cls, defn, **overrides):
        n, r = defn.net, defn.region
        cfg = cls(
            batch=n.batch, learning_rate=n.learning_rate, momentum=n.momentum,
            weight_decay=n.decay, lr_steps=tuple(n.steps), lr_scales=tuple(n.scales),
            burn_in=n.burn_in, burn_in_power=n.power,
            max_iterations=n.max_batches, coord_scale=r.coord_scale,
            object_scale=r.object_scale, noobject_scale=r.noobject_scale,
            class_scale=r.class_scale, ignore_iou_threshold=r.thresh,
        )
        return replace(cfg, **overrides)


def learning_rate_at(iteration, config):
    """Step schedule: the rate is multiplied by each factor once its step is reached.

    During the first ``burn_in`` iterations the rate ramps up as
    ``lr * (iteration / burn_in) ** burn_in_power``.
    """
    lr = config.learning_rate
    if iteration < config.burn_in:
        return lr * (iteration / config.burn_in) ** config.burn_in_power
    for step, scale in zip(config.lr_steps, config.lr_scales):
        if iteration >= step:
            lr *= scale
    return lr


@dataclass
class TrainState:
    iteration: int = 0
    velocity: dict = field(default_factory=dict)
    running_loss: float | None = None

    def record(self, loss):
        self.running_loss = loss if self.running_loss is None else 0.9 * self.running_loss + 0.1 * loss


# --------------------------------------------------------------------------
# assignment and loss


def _cell(v, s):
    return min(int(math.floor(v * s)), s - 1)


def anchor_ious(w, h, anchors, s):
    """IoU between a ``w x h`` box and each anchor prior when centres coincide."""
    anchors = np.asarray(anchors, dtype=np.float64) / s
    inter = np.minimum(w, anchors[:, 0]) * np.minimum(h, anchors[:, 1])
    union = w * h + anchors[:, 0] * anchors[:, 1] - inter
    return inter / union


def assign_anchors(truths, anchors, s):
    """Map each truth to its responsible ``(cell_y, cell_x, anchor)``.

    Returns ``{(cell_y, cell_x, anchor): truth_index}``; on collisions the
    later truth wins.
    """
    out = {}
    for i, t in enumerate(truths):
        t.validate(i)
        a = int(np.argmax(anchor_ious(t.w, t.h, anchors, s)))
        out[(_cell(t.cy, s), _cell(t.cx, s), a)] = i
    return out


def region_loss(raw, truths, anchors, config):
    """Sum-of-squares region loss for one image and its gradient.

    ``raw`` is a :class:`RawPrediction`; the gradient has the shape of
    ``raw.head``.
    """
    s, na, nc = raw.grid, raw.num_anchors, raw.classes
    f = raw.fields.astype(np.float64)
    grad = np.zeros_like(f)
    anchors = np.asarray(anchors, dtype=np.float64)

    sx, sy, so = sigmoid(f[:, 0]), sigmoid(f[:, 1]), sigmoid(f[:, 4])
    probs = softmax(f[:, 5:], axis=1)

    assignment = assign_anchors(truths, anchors, s)
    responsible = np.zeros((na, s, s), dtype=bool)
    for (gy, gx, a) in assignment:
        responsible[a, gy, gx] = True

    if truths:
        pred = center_to_corners(decode_boxes(raw, anchors)).reshape(-1, 4)
        best = iou_matrix(pred, [t.corners for t in truths]).max(axis=1).reshape(na, s, s)
    else:
        best = np.zeros((na, s, s))
    noobj = ~responsible & (best <= config.ignore_iou_threshold)

    loss = config.noobject_scale * np.sum(so[noobj] ** 2)
    grad[:, 4] = np.where(noobj, config.noobject_scale * 2 * so * so * (1 - so), 0.0)

    cs, os_, ks = config.coord_scale, config.object_scale, config.class_scale
    for (gy, gx, a), i in assignment.items():
        t = truths[i]
        tx, ty = t.cx * s - gx, t.cy * s - gy
        tw, th = math.log(t.w * s / anchors[a, 0]), math.log(t.h * s / anchors[a, 1])
        px, py, pw, ph = sx[a, gy, gx], sy[a, gy, gx], f[a, 2, gy, gx], f[a, 3, gy, gx]
        loss += cs * ((px - tx) ** 2 + (py - ty) ** 2 + (pw - tw) ** 2 + (ph - th) ** 2)
        grad[a, 0, gy, gx] = cs * 2 * (px - tx) * px * (1 - px)
        grad[a, 1, gy, gx] = cs * 2 * (py - ty) * py * (1 - py)
        grad[a, 2, gy, gx] = cs * 2 * (pw - tw)
        grad[a, 3, gy, gx] = cs * 2 * (ph - th)

        o = so[a, gy, gx]
        loss += os_ * (o - 1) ** 2
        grad[a, 4, gy, gx] = os_ * 2 * (o - 1) * o * (1 - o)

        p = probs[a, :, gy, gx]
        target = np.zeros(nc)
        target[t.class_id] = 1.0
        loss += ks * np.sum((p - target) ** 2)
        g = ks * 2 * (p - target)
        grad[a, 5:, gy, gx] = p * (g - np.dot(g, p))

    return float(loss), grad.reshape(raw.head.shape).astype(DTYPE)


def batch_loss(head, truths_batch, anchors, config, classes):
    """Mean region loss over a batch head ``(N, depth, S, S)``."""
    n = head.shape[0]
    na = len(anchors)
    total, grads = 0.0, np.empty_like(head)
    for i in range(n):
        l, g = region_loss(RawPrediction(head[i], na, classes), truths_batch[i], anchors, config)
        total += l
        grads[i] = g
    return total / n, grads / DTYPE(n)


# --------------------------------------------------------------------------
# optimizer


def _slots(params, grads):
    for i, (p, g) in enumerate(zip(params, grads)):
        yield (i, "w"), p.weights, g.weights, True
        if p.bn is not None:
            yield (i, "gamma"), p.bn.gamma, g.gamma, False
            yield (i, "beta"), p.bn.beta, g.beta, False


def sgd_step(params, grads, state, config):
    """Momentum SGD, in place; weight decay applies to conv weights only.

    ``v <- momentum * v - lr * (grad + decay * param)`` then ``param += v``.
    """
    lr = DTYPE(learning_rate_at(state.iteration, config))
    mom, decay = DTYPE(config.momentum), DTYPE(config.weight_decay)
    for key, p, g, decays in _slots(params, grads):
        v = state.velocity.get(key)
        if v is None:
            v = state.velocity[key] = np.zeros_like(p)
        step = g + decay * p if decays else g
        v *= mom
        v -= lr * step
        p += v
    state.iteration += 1
    return params, state


# --------------------------------------------------------------------------
# anchors


def kmeans_anchors(sizes, s, k=4, iterations=100, seed=0):
    """Cluster normalized ``(w, h)`` pairs with ``1 - IoU`` distance.

    Seeding is k-means++ under the same distance, so results are
    deterministic for a given ``seed``.

    Returns ``k`` anchors in grid-cell units, sorted by area.
    """
    wh = np.asarray(sizes, dtype=np.float64).reshape(-1, 2) * s
    if len(wh) < k:
        raise DataError(f"need at least {k} boxes to cluster, got {len(wh)}")
    rng = np.random.default_rng(seed)

    def overlap(centers):
        inter = np.minimum(wh[:, None, 0], centers[None, :, 0]) * np.minimum(wh[:, None, 1], centers[None, :, 1])
        union = (wh[:, 0] * wh[:, 1])[:, None] + (centers[:, 0] * centers[:, 1])[None, :] - inter
        return inter / union

    # k-means++ seeding under the 1 - IoU distance
    centers = wh[[rng.integers(len(wh))]]
    while len(centers) < k:
        d2 = (1 - overlap(centers).max(axis=1)) ** 2
        pick = rng.choice(len(wh), p=d2 / d2.sum()) if d2.sum() > 0 else rng.integers(len(wh))
        centers = np.vstack([centers, wh[pick]])
    for _ in range(iterations):
        nearest = np.argmax(overlap(centers), axis=1)
        new = np.array([wh[nearest == j].mean(axis=0) if np.any(nearest == j) else centers[j]
                        for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    order = np.argsort(centers[:, 0] * centers[:, 1])
    return [tuple(map(float, c)) for c in centers[order]]


# --------------------------------------------------------------------------
# training loop


def load_dataset(image_paths, defn):
    """Images resized to the network input plus their label boxes."""
    if not image_paths:
        raise DataError("dataset is empty")
    images, labels = [], []
    for p in image_paths:
        img = read_image(p)
        images.append(resize_bilinear(img, defn.net.width, defn.net.height))
        boxes = read_labels(label_path(p))
        for b in boxes:
            if not 0 <= b.class_id < defn.region.classes:
                raise DataError(f"{label_path(p)}: class id {b.class_id} out of range")
        labels.append(boxes)
    return np.stack(images), labels


@dataclass
class TrainResult:
    params: list
    log: list
    state: TrainState


def train(image_paths, defn, config=None, seed=0, out_dir=None, params=None):
    """Train from scratch (or from ``params``) for ``config.max_iterations``.

    ``image_paths`` is a list of images or a manifest path.  Minibatches
    are drawn from a seeded shuffle, reshuffled every epoch.  With
    ``out_dir`` the loss log (``loss.csv``) and weights checkpoints are
    written there.
    """
    if isinstance(image_paths, (str, Path)):
        image_paths = read_manifest(image_paths)
    config = config or TrainConfig.from_netdef(defn)
    images, labels = load_dataset(list(image_paths), defn)
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_weights(defn, seed)
    anchors = defn.region.anchors
    classes = defn.region.classes
    state = TrainState()
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    order, cursor = rng.permutation(len(images)), 0
    while state.iteration < config.max_iterations:
        idx = []
        while len(idx) < config.batch:
            if cursor == len(order):
                order, cursor = rng.permutation(len(images)), 0
            idx.append(order[cursor])
            cursor += 1
        head, tape = network.run(defn, params, images[idx], mode="train", keep_tape=True)
        loss, grad_head = batch_loss(head, [labels[i] for i in idx], anchors, config, classes)
        grads, _ = network.backward(defn, tape, grad_head)
        lr = learning_rate_at(state.iteration, config)
        sgd_step(params, grads, state, config)
        state.record(loss)
        rows.append((state.iteration, lr, loss))
        if state.iteration % 50 == 0:
            log.info("iter %d lr %.6g loss %.4f avg %.4f", state.iteration, lr, loss, state.running_loss)
        if out_dir is not None and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
            save_weights(defn, params, out_dir / f"iter_{state.iteration}.weights",
                         seen=state.iteration * config.batch)

    if out_dir is not None:
        save_weights(defn, params, out_dir / "final.weights", seen=state.iteration * config.batch)
        write_loss_log(out_dir / "loss.csv", rows)
    return TrainResult(params, rows, state)


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lr", "loss"])
        for it, lr, loss in rows:
            w.writerow([it, repr(float(lr)), repr(float(loss))])
