"""Central finite-difference gradient checks for the classifiers."""

import numpy as np

# Below this magnitude, relative error is taken against the floor: with a
# 1e-6 step the difference quotient itself carries ~1e-10 round-off.
REL_FLOOR = 1e-4


def numeric_gradients(net, x, labels, eps=1e-6):
    """Central differences of the batch cross-entropy w.r.t. every parameter."""
    grads = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            saved = p[idx]
            p[idx] = saved + eps
            up = net.loss(x, labels)
            p[idx] = saved - eps
            down = net.loss(x, labels)
            p[idx] = saved
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=REL_FLOOR):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
