"""Seeded finite-difference cases shared by the training and acceptance tests."""
import numpy as np

from sssdet import network
from sssdet.inference import RawPrediction
from sssdet.netdef import parse_config
from sssdet.training import GroundTruthBox, TrainConfig, batch_loss, region_loss
from sssdet.weights import init_weights

from oracles import kink_aware_check, noobject_mask

ANCHORS = ((1.0, 1.5), (2.0, 2.0))
CLASSES = 4

TINY_NET = """
[net]
width=16
height=16
[convolutional]
batch_normalize=1
filters=4
size=3
activation=leaky
[maxpool]
[convolutional]
batch_normalize=1
filters=6
size=3
activation=leaky
[convolutional]
filters=18
size=3
activation=linear
[region]
anchors=1,1.5, 2,2
classes=4
"""

# fraction of sampled coordinates that must survive the kink filter
MIN_CHECKED = 0.8


def random_truths(rng, n):
    return [GroundTruthBox(int(rng.integers(CLASSES)), *rng.uniform(0.1, 0.9, 2), *rng.uniform(0.1, 0.5, 2))
            for _ in range(n)]


def region_case(seed, s=4):
    """Every head coordinate of a random region-loss problem."""
    rng = np.random.default_rng(seed)
    head = rng.normal(0, 1, (len(ANCHORS) * (5 + CLASSES), s, s)).astype(np.float32)
    truths = random_truths(rng, int(rng.integers(1, 4)))
    # uneven scales so a mis-weighted term cannot hide
    config = TrainConfig(coord_scale=1.3, object_scale=5.0, noobject_scale=0.7, class_scale=1.9,
                         ignore_iou_threshold=0.3)

    def loss():
        return region_loss(RawPrediction(head, len(ANCHORS), CLASSES), truths, ANCHORS, config)[0]

    def pattern():
        return (noobject_mask(head, truths, ANCHORS, config.ignore_iou_threshold),)

    _, grad = region_loss(RawPrediction(head, len(ANCHORS), CLASSES), truths, ANCHORS, config)
    return kink_aware_check(loss, pattern, head, grad, 1e-2, range(head.size))


def network_case(seed):
    """Every trainable parameter of the tiny network under the region loss."""
    defn = parse_config(TINY_NET)
    rng = np.random.default_rng(seed)
    params = init_weights(defn, seed)
    for p in params:
        if p.bn is not None:
            p.bn.gamma[...] = rng.uniform(0.5, 1.5, p.bn.gamma.shape)
            p.bn.beta[...] = rng.normal(0, 0.5, p.bn.beta.shape)
    x = rng.random((2, 3, 16, 16), dtype=np.float32)
    truths = [random_truths(rng, int(rng.integers(1, 3))) for _ in range(2)]
    config = TrainConfig.from_netdef(defn)
    anchors = defn.region.anchors

    def loss():
        head = network.run(defn, params, x, mode="train", update_stats=False)
        return batch_loss(head, truths, anchors, config, CLASSES)[0]

    def pattern():
        head, tape = network.run(defn, params, x, mode="train", keep_tape=True, update_stats=False)
        out = []
        for entry in tape:
            if entry[0] == "maxpool":
                out.append(entry[1])
            elif entry[3] is not None:
                out.append(entry[3] > 0)
        out.extend(noobject_mask(h, t, anchors, config.ignore_iou_threshold) for h, t in zip(head, truths))
        return tuple(out)

    head, tape = network.run(defn, params, x, mode="train", keep_tape=True, update_stats=False)
    _, grad_head = batch_loss(head, truths, anchors, config, CLASSES)
    grads, _ = network.backward(defn, tape, grad_head)

    results = []
    for p, g in zip(params, grads):
        slots = [(p.weights, g.weights)]
        if p.bn is not None:
            slots += [(p.bn.gamma, g.gamma), (p.bn.beta, g.beta)]
        for arr, analytic in slots:
            h = 1e-2 * max(float(np.sqrt(np.mean(arr ** 2))), 0.1)
            results.append(kink_aware_check(loss, pattern, arr, analytic, h, range(arr.size)))
    return results


def summarize(results):
    """Worst error and overall checked fraction over ``(err, checked, total)`` triples."""
    worst = max(r[0] for r in results)
    checked = sum(r[1] for r in results) / sum(r[2] for r in results)
    return worst, checked
