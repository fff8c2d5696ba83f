"""
Kernels and their gradients
===========================

The engine lowers every convolution to a single matrix product.  Here we
compare it with a direct loop, then check backpropagation through a small
network against central differences.
"""

import time

import numpy as np

from sssdet import network
from sssdet import tensor as T
from sssdet.netdef import parse_config
from sssdet.training import GroundTruthBox, TrainConfig, batch_loss
from sssdet.weights import init_weights

rng = np.random.default_rng(0)

# A direct six-loop convolution for reference.
def direct_conv(x, w):
    n, c, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, cout, h, wd))
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                out[:, o, i, j] = np.sum(xp[:, :, i:i + k, j:j + k] * w[o], axis=(1, 2, 3))
    return out

x = rng.standard_normal((1, 8, 24, 24)).astype(np.float32)
w = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)

t0 = time.perf_counter()
fast, _ = T.conv2d_forward(x, w)
t1 = time.perf_counter()
slow = direct_conv(x, w)
t2 = time.perf_counter()
print(f"im2col {1e3 * (t1 - t0):.2f} ms, loops {1e3 * (t2 - t1):.1f} ms, "
      f"max diff {np.abs(fast - slow).max():.1e}")

# A two-conv network with batch norm, a pool and a linear head.
defn = parse_config("""
[net]
width=16
height=16
[convolutional]
batch_normalize=1
filters=4
size=3
[maxpool]
[convolutional]
filters=18
size=3
activation=linear
[region]
anchors=1,1.5, 2,2
classes=4
""")
params = init_weights(defn, seed=1)
images = rng.random((2, 3, 16, 16), dtype=np.float32)
truths = [[GroundTruthBox(1, 0.4, 0.5, 0.3, 0.2)], [GroundTruthBox(3, 0.7, 0.3, 0.2, 0.4)]]
config = TrainConfig.from_netdef(defn)

def loss():
    head = network.run(defn, params, images, mode="train", update_stats=False)
    return batch_loss(head, truths, defn.region.anchors, config, 4)[0]

head, tape = network.run(defn, params, images, mode="train", keep_tape=True, update_stats=False)
_, grad_head = batch_loss(head, truths, defn.region.anchors, config, 4)
grads, _ = network.backward(defn, tape, grad_head)

# Compare a handful of first-layer weight gradients with central differences.
# Most agree to four digits.  A step that pushes a unit across the leaky
# ReLU kink or flips a pool winner disagrees more; the test suite detects
# those coordinates and retries them with a smaller step.
flat, analytic = params[0].weights.reshape(-1), grads[0].weights.reshape(-1)
h = 1e-2 * float(np.sqrt(np.mean(flat ** 2)))
for i in rng.choice(flat.size, 6, replace=False):
    orig = flat[i]
    flat[i] = orig + h
    up = loss()
    flat[i] = orig - h
    down = loss()
    flat[i] = orig
    print(f"w[{i:3d}]  backprop {analytic[i]:+.5f}  finite diff {(up - down) / (2 * h):+.5f}")
