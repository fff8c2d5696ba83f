"""Dataset preparation: cutting large scenes into tiles, train/test splits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .inference import read_ppm, write_ppm
from .training import GroundTruthBox, read_labels


@dataclass(frozen=True)
class TileSpec:
    rows: int = 4
    cols: int = 4
    overlap: int = 0
    min_fraction: float = 0.3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if not 0 < self.min_fraction <= 1:
            raise ValueError("min_fraction must lie in (0, 1]")
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")


@dataclass
class Tile:
    row: int
    col: int
    x0: int
    y0: int
    x1: int
    y1: int
    labels: list
    image: np.ndarray | None = None

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0


def _edges(length, parts, overlap):
    size = (length + (parts - 1) * overlap) // parts
    if size < 1 or size <= overlap:
        raise DataError(f"image of {length} px is too small for {parts} tiles with {overlap} px overlap")
    starts = [i * (size - overlap) for i in range(parts)]
    ends = [s + size for s in starts[:-1]] + [length]
    return list(zip(starts, ends))


def tile_boxes(width, height, labels, spec=TileSpec()):
    """Compute tile windows and the labels each one keeps.

    A box is clipped to every tile it intersects and kept there when the
    clipped area is at least ``min_fraction`` of its full area; kept boxes
    are renormalized to tile coordinates.
    """
    tiles = []
    for r, (y0, y1) in enumerate(_edges(height, spec.rows, spec.overlap)):
        for c, (x0, x1) in enumerate(_edges(width, spec.cols, spec.overlap)):
            kept = []
            tw, th = x1 - x0, y1 - y0
            for b in labels:
                bx0, by0 = (b.cx - b.w / 2) * width, (b.cy - b.h / 2) * height
                bx1, by1 = (b.cx + b.w / 2) * width, (b.cy + b.h / 2) * height
                cx0, cy0 = max(bx0, x0), max(by0, y0)
                cx1, cy1 = min(bx1, x1), min(by1, y1)
                if cx1 <= cx0 or cy1 <= cy0:
                    continue
                full = (bx1 - bx0) * (by1 - by0)
                if (cx1 - cx0) * (cy1 - cy0) < spec.min_fraction * full - 1e-9:
                    continue
                kept.append(GroundTruthBox(
                    b.class_id,
                    ((cx0 + cx1) / 2 - x0) / tw, ((cy0 + cy1) / 2 - y0) / th,
                    (cx1 - cx0) / tw, (cy1 - cy0) / th,
                ))
            tiles.append(Tile(r, c, x0, y0, x1, y1, kept))
    return tiles


def tile_image(image, labels, spec=TileSpec()):
    """Tile an ``(H, W, 3)`` image; each returned tile carries its crop."""
    h, w = image.shape[:2]
    tiles = tile_boxes(w, h, labels, spec)
    for t in tiles:
        t.image = image[t.y0:t.y1, t.x0:t.x1].copy()
    return tiles


def write_tiles(image_path, label_file, out_dir, spec=TileSpec()):
    """Tile a PPM scene and its labels into ``out_dir``; returns tile image paths."""
    image_path = Path(image_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tiles = tile_image(read_ppm(image_path), read_labels(label_file), spec)
    paths = []
    for t in tiles:
        stem = f"{image_path.stem}_r{t.row}c{t.col}"
        write_ppm(out_dir / f"{stem}.ppm", t.image)
        (out_dir / f"{stem}.txt").write_text("".join(
            f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in t.labels))
        paths.append(out_dir / f"{stem}.ppm")
    return paths


def _spans_meet(a0, a1, b0, b1, tol):
    return a0 <= b1 + tol and b0 <= a1 + tol


def _agree_in_shared_window(a, b, tol):
    ta, tb = a[5], b[5]
    wx0, wy0 = max(ta.x0, tb.x0), max(ta.y0, tb.y0)
    wx1, wy1 = min(ta.x1, tb.x1), min(ta.y1, tb.y1)
    if wx1 <= wx0 or wy1 <= wy0:
        return False
    clips = []
    for f in (a, b):
        c = (max(f[1], wx0), max(f[2], wy0), min(f[3], wx1), min(f[4], wy1))
        if c[2] <= c[0] or c[3] <= c[1]:
            return False
        clips.append(c)
    return all(abs(u - v) <= tol for u, v in zip(*clips))


def merge_tile_labels(tiles, tol=1.0):
    """Map tile labels back to source pixels and rejoin fragments cut by seams.

    Returns ``(class_id, x0, y0, x1, y1)`` tuples in source pixel coordinates.
    Two same-class fragments belong to one object when one is clipped at
    its tile's right (bottom) edge, the other at its tile's left (top)
    edge, and they meet across that seam within ``tol`` px.  With
    overlapping tiles, fragments also join when their clips to the shared
    window agree within ``tol``.  Each connected group is reported as its
    bounding box.
    """
    frags = []
    for t in tiles:
        for b in t.labels:
            x0, y0 = t.x0 + (b.cx - b.w / 2) * t.width, t.y0 + (b.cy - b.h / 2) * t.height
            x1, y1 = t.x0 + (b.cx + b.w / 2) * t.width, t.y0 + (b.cy + b.h / 2) * t.height
            frags.append((b.class_id, x0, y0, x1, y1, t))

    parent = list(range(len(frags)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(frags):
        for j, b in enumerate(frags):
            if i == j or a[0] != b[0] or a[5] is b[5]:
                continue
            ta, tb = a[5], b[5]
            across_x = (abs(a[3] - ta.x1) <= tol and abs(b[1] - tb.x0) <= tol and tb.x0 < ta.x1 + tol
                        and _spans_meet(a[1], a[3], b[1], b[3], tol) and _spans_meet(a[2], a[4], b[2], b[4], tol))
            across_y = (abs(a[4] - ta.y1) <= tol and abs(b[2] - tb.y0) <= tol and tb.y0 < ta.y1 + tol
                        and _spans_meet(a[2], a[4], b[2], b[4], tol) and _spans_meet(a[1], a[3], b[1], b[3], tol))
            if across_x or across_y or _agree_in_shared_window(a, b, tol):
                parent[find(i)] = find(j)

    groups = {}
    for i, f in enumerate(frags):
        groups.setdefault(find(i), []).append(f)
    out = []
    for members in groups.values():
        out.append((members[0][0], min(m[1] for m in members), min(m[2] for m in members),
                    max(m[3] for m in members), max(m[4] for m in members)))
    return sorted(out, key=lambda m: (m[2], m[1], m[0]))


def split_manifest(paths, ratio=0.9, seed=0):
    """Seeded shuffle then split; the train part has ``floor(n * ratio)`` entries."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    paths = list(paths)
    if not paths:
        raise DataError("manifest is empty")
    order = np.random.default_rng(seed).permutation(len(paths))
    n_train = int(math.floor(len(paths) * ratio + 1e-9))
    shuffled = [paths[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]
