"""Layer-graph execution: forward pass and backpropagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError


@dataclass
class ConvGrads:
    weights: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


def run(defn, params, x, mode="infer", keep_tape=False, update_stats=True):
    """Run every layer of ``defn`` on the batch ``x``.

    Returns the head tensor ``(N, depth, S, S)`` and, with ``keep_tape``,
    the per-layer caches :func:`backward` needs.
    """
    x = T.as_tensor(x, "network input")
    if x.shape[1:] != defn.input_shape:
        raise ConfigError(f"input shape {x.shape[1:]} != network input {defn.input_shape}")
    slope = defn.net.leaky_slope
    tape = []
    p_iter = iter(params)
    for i, layer in enumerate(defn.layers):
        if layer.kind == "conv":
            p = next(p_iter)
            z, conv_cache = T.conv2d_forward(x, p.weights, name=i)
            bn_cache = None
            if p.bn is not None:
                z, bn_cache = T.batchnorm_forward(z, p.bn, mode=mode, update_stats=update_stats)
            if layer.activation == "leaky":
                x = T.leaky_relu(z, slope)
            else:
                x = z
            if keep_tape:
                tape.append(("conv", conv_cache, bn_cache, z if layer.activation == "leaky" else None))
        elif layer.kind == "maxpool":
            x, idx = T.maxpool2x2_forward(x, name=i)
            if keep_tape:
                tape.append(("maxpool", idx))
    return (x, tape) if keep_tape else x


def backward(defn, tape, grad_head):
    """Backpropagate ``grad_head`` through a tape recorded by :func:`run`.

    Returns ``(grads, grad_input)`` with one :class:`ConvGrads` per conv
    layer in network order.
    """
    slope = defn.net.leaky_slope
    g = np.asarray(grad_head, dtype=T.DTYPE)
    grads = []
    for entry in reversed(tape):
        if entry[0] == "maxpool":
            g = T.maxpool2x2_backward(entry[1], g)
            continue
        _, conv_cache, bn_cache, pre_act = entry
        if pre_act is not None:
            g = T.leaky_relu_backward(pre_act, g, slope)
        gg = gb = None
        if bn_cache is not None:
            g, gg, gb = T.batchnorm_backward(bn_cache, g)
        g, gw = T.conv2d_backward(conv_cache, g)
        grads.append(ConvGrads(gw, gg, gb))
    grads.reverse()
    return grads, g
