"""Central finite-difference check shared by the unit and acceptance tests.

A ReLU network is not differentiable where a pre-activation is zero. If a
perturbation of +-step flips any unit's sign for any sample, the difference
quotient straddles a kink and says nothing about the gradient, so the whole
batch is redrawn. Every parameter is still checked on every accepted batch.
"""

import numpy as np

from neuralenvelope.geometry import Box
from neuralenvelope.neural import Encoding, _forward_trace, loss_and_grad, make_model


class KinkCrossed(Exception):
    pass


def _pattern(model, x):
    _, pre = _forward_trace(model, x)
    return [z > 0 for z in pre[:-1]]


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))

BOX = Box((0.0, 0.0), (1.0, 1.0))


def max_relative_error(model, x, labels, step=1e-4):
    _, grads = loss_and_grad(model, x, labels)
    base = _pattern(model, x)
    worst = 0.0
    for p, g in zip(model.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up, _ = loss_and_grad(model, x, labels)
            flat_up = _same(_pattern(model, x), base)
            flat[i] = keep - step
            down, _ = loss_and_grad(model, x, labels)
            flat_down = _same(_pattern(model, x), base)
            flat[i] = keep
            if not (flat_up and flat_down):
                raise KinkCrossed
            num = (up - down) / (2 * step)
            denom = max(abs(num), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst


def gradient_check(hidden, encoding: Encoding, n_out=3, batches=10, batch_size=8, seed=0):
    """Worst relative error over ``batches`` random batches, each on a fresh random model."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for b in range(batches):
        model = make_model(2, hidden, n_out, encoding, BOX, seed=seed * 1000 + b)
        for bias in model.biases:
            bias[:] = rng.normal(scale=0.1, size=bias.shape)
        for _ in range(100):
            x = rng.random((batch_size, 2))
            labels = rng.integers(0, n_out, batch_size)
            try:
                worst = max(worst, max_relative_error(model, x, labels))
                break
            except KinkCrossed:
                continue
        else:
            raise RuntimeError("could not draw a batch away from ReLU kinks")
    return worst
