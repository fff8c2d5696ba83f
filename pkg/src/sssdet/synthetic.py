"""Synthetic rectangle scenes for smoke tests and desk-scale training."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .inference import write_ppm

CLASS_COLORS = ((220, 40, 40), (40, 200, 60), (50, 80, 230), (230, 210, 40))
BACKGROUND = (60, 60, 60)


def rectangle_scene(rng, size=160, max_boxes=3, min_side=16, max_side=48, classes=4):
    """One image with non-overlapping solid rectangles and its label boxes."""
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    taken = np.zeros((size, size), dtype=bool)
    labels = []
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        for _attempt in range(50):
            w, h = (int(v) for v in rng.integers(min_side, max_side + 1, size=2))
            x, y = int(rng.integers(0, size - w)), int(rng.integers(0, size - h))
            if not taken[max(0, y - 2):y + h + 2, max(0, x - 2):x + w + 2].any():
                break
        else:
            continue
        c = int(rng.integers(0, classes))
        img[y:y + h, x:x + w] = CLASS_COLORS[c]
        taken[y:y + h, x:x + w] = True
        labels.append((c, (x + w / 2) / size, (y + h / 2) / size, w / size, h / size))
    return img, labels


def write_dataset(out_dir, count=10, size=160, seed=0, **kwargs):
    """Write ``count`` PPM images with sibling label files and a manifest.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        img, labels = rectangle_scene(rng, size=size, **kwargs)
        path = out_dir / f"scene_{i:03d}.ppm"
        write_ppm(path, img)
        path.with_suffix(".txt").write_text(
            "".join(f"{c} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n" for c, cx, cy, w, h in labels))
        paths.append(path.name)
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(paths) + "\n")
    return manifest
