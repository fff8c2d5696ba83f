"""Independent brute-force references used only by the tests."""
import itertools

import numpy as np


def naive_conv2d(x, w):
    """Zero-padded stride-1 cross-correlation with explicit loops."""
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    p = k // 2
    out = np.zeros((n, cout, h, wd), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for ci in range(cin):
                        for dy in range(k):
                            for dx in range(k):
                                y, xx = i + dy - p, j + dx - p
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += float(x[b, ci, y, xx]) * float(w[o, ci, dy, dx])
                    out[b, o, i, j] = acc
    return out


def naive_maxpool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for b, ch, i, j in itertools.product(range(n), range(c), range(h // 2), range(w // 2)):
        out[b, ch, i, j] = max(x[b, ch, 2 * i + dy, 2 * j + dx] for dy in (0, 1) for dx in (0, 1))
    return out


def naive_batchnorm_train(x, gamma, beta, eps):
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    means, variances = [], []
    for ch in range(c):
        vals = [float(v) for v in x[:, ch].ravel()]
        m = sum(vals) / len(vals)
        v = sum((u - m) ** 2 for u in vals) / len(vals)
        means.append(m)
        variances.append(v)
        out[:, ch] = (x[:, ch] - m) / np.sqrt(v + eps) * gamma[ch] + beta[ch]
    return out, np.array(means), np.array(variances)


def box_iou(a, b):
    """Corner-form IoU computed from explicit interval overlaps."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def reference_nms(boxes, scores, classes, thr):
    """O(n^2) greedy NMS: a box survives iff no better-ranked surviving box of its class overlaps it."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    alive = []
    for i in order:
        if not any(classes[j] == classes[i] and box_iou(boxes[i], boxes[j]) > thr for j in alive):
            alive.append(i)
    return sorted(alive)


def central_difference(f, arr, h, index):
    """Central difference of scalar ``f()`` wrt ``arr.flat[index]``, restoring the value."""
    flat = arr.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = f()
    flat[index] = orig - h
    fm = f()
    flat[index] = orig
    return (fp - fm) / (2 * h)


def relative_error(a, b):
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||)."""
    a, b = np.ravel(a).astype(np.float64), np.ravel(b).astype(np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def noobject_mask(head, truths, anchors, thr):
    """Anchors whose decoded box overlaps no truth by more than ``thr``.

    Recomputed from the head with the textbook decode so the gradient
    checks can tell when a perturbation flips an anchor across the
    ignore threshold.
    """
    head = np.asarray(head, np.float64)
    na = len(anchors)
    depth, s, _ = head.shape
    f = head.reshape(na, depth // na, s, s)
    mask = np.ones((na, s, s), dtype=bool)
    for a in range(na):
        for gy in range(s):
            for gx in range(s):
                cx = (gx + _sig(f[a, 0, gy, gx])) / s
                cy = (gy + _sig(f[a, 1, gy, gx])) / s
                w = anchors[a][0] * np.exp(f[a, 2, gy, gx]) / s
                h = anchors[a][1] * np.exp(f[a, 3, gy, gx]) / s
                box = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
                for t in truths:
                    tb = (t.cx - t.w / 2, t.cy - t.h / 2, t.cx + t.w / 2, t.cy + t.h / 2)
                    if box_iou(box, tb) > thr:
                        mask[a, gy, gx] = False
    return mask


def same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def kink_aware_check(loss, pattern, arr, analytic, h, indices, retries=2):
    """Central differences that skip coordinates where ``+-h`` crosses a kink.

    ``pattern()`` returns the tuple of discrete decisions (activation signs,
    pooling winners, loss masks).  A coordinate is accepted only when both
    perturbed evaluations see the base pattern; otherwise the step shrinks
    by 4x up to ``retries`` times before the coordinate is skipped.

    Returns ``(relative_error, checked, total)``.
    """
    base = pattern()
    flat = arr.reshape(-1)
    num, ana = [], []
    for i in indices:
        step = h
        for _ in range(retries + 1):
            orig = flat[i]
            flat[i] = orig + step
            fp, pp = loss(), pattern()
            flat[i] = orig - step
            fm, pm = loss(), pattern()
            flat[i] = orig
            if same_pattern(base, pp) and same_pattern(base, pm):
                num.append((fp - fm) / (2 * step))
                ana.append(analytic.reshape(-1)[i])
                break
            step /= 4
    return relative_error(num, ana) if num else float("nan"), len(num), len(indices)
