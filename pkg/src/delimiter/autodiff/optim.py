"""Adam with bias-corrected moments."""

from __future__ import annotations

import numpy as np


def adam_init(params) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), epsilon=1e-8):
    """Update ``params`` in place and return ``(params, state)``.

    ``state`` comes from :func:`adam_init` and is updated in place too.
    """
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
    return params, state
