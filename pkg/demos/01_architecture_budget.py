"""
Architecture budget of the reference detector
=============================================

Parse the shipped 608x608 config, walk the shape chain and account for
parameters, FLOPs and the size of a saved weights file.
"""

import tempfile
from pathlib import Path

from sssdet.netdef import account, reference_config, summarize
from sssdet.weights import init_weights, save_weights

defn = reference_config()

# Ten convolutions and three 2x2 pools take 608 px down to a 76x76 grid.
for layer, shape in zip(defn.layers, defn.shapes):
    print(f"{layer.kind:<8} -> {shape}")

# The head holds 4 anchors x (5 box/objectness values + 4 classes) per cell.
print("head:", defn.output_shape, "cells:", defn.grid_size ** 2)

# Per-layer table, the same one `sssdet inspect sssdet.cfg` prints.
print(summarize(defn))

# The file size follows from the parameter count: a 20-byte header plus
# one float32 per parameter, with no bias arrays anywhere.
report = account(defn)
with tempfile.TemporaryDirectory() as tmp:
    n = save_weights(defn, init_weights(defn, seed=0), Path(tmp) / "sssdet.weights")
print(f"{report.params:,} params -> {n:,} bytes on disk ({n / 1e6:.2f} MB)")
