"""Backprop-versus-finite-difference verification."""
from __future__ import annotations

import numpy as np

from .network import Network, _stream, batch_loss, class_weights


def _loss(net, x, y, w, l1, l2, train, seed):
    # re-seeding gives every evaluation the same dropout masks
    loss, grad = batch_loss(net, x, y, w, l1, l2, _stream(seed, 2), train)
    return loss, grad


def gradient_check(spec, data, labels, input_shape=None, seed: int = 0, l1: float = 0.0,
                   l2: float = 0.0, mode: str = "train", step: float = 1e-4,
                   floor: float = 1e-7, network: Network | None = None) -> float:
    """Largest relative error between backprop and central differences.

    The relative error of one parameter is ``|a - n| / max(|a| + |n|, floor)``.
    Batch-norm layers use batch statistics when ``mode == "train"``; their
    running buffers are restored after every evaluation.
    """
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    net = network or Network(spec, input_shape or x.shape[1:], seed=seed, dtype=np.float64)
    w = class_weights(y)
    train = mode == "train"
    saved = [(a, a.copy()) for _, _, a in net.buffers()]

    def restore():
        for a, v in saved:
            a[...] = v

    _, grad = _loss(net, x, y, w, l1, l2, train, seed)
    net.backward(grad)
    net.penalty_grads(l1, l2)
    analytic = {(l.index, n): l.grads[n].copy() for l in net.layers for n in l.params}
    restore()

    worst = 0.0
    for idx, name, arr in net.parameters():
        a = analytic[(idx, name)]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = _loss(net, x, y, w, l1, l2, train, seed)
            restore()
            flat[i] = orig - step
            down, _ = _loss(net, x, y, w, l1, l2, train, seed)
            restore()
            flat[i] = orig
            num = (up - down) / (2 * step)
            ana = a.reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana) + abs(num), floor)
            worst = max(worst, rel)
    return worst
