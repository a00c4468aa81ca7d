"""Full-batch gradient descent with backtracking halving.

The loop is stateless across epochs (every epoch restarts from the base
learning rate), so running E1 + E2 epochs in one call is identical to two
chained calls of E1 and E2 epochs. The elimination stage and the baselines
all rely on that property.
"""

from __future__ import annotations

import numpy as np

MAX_HALVINGS = 30


def descend(params: np.ndarray, value_fn, grad_fn, epochs: int, learning_rate: float):
    """Minimize value_fn by full-batch descent; returns (params, final value).

    Each epoch takes the steepest-descent step at the base rate, halving it
    until the objective does not increase; if no halving helps, the run stops
    (converged/stalled). The accepted objective is non-increasing, so the
    final value never exceeds the initial one.
    """
    p = np.array(params, dtype=float, copy=True)
    f = float(value_fn(p))
    if not np.isfinite(f):
        raise RuntimeError("non-finite objective at epoch 0")
    for epoch in range(epochs):
        g = grad_fn(p)
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient at epoch {epoch}")
        step = learning_rate
        accepted = None
        for _ in range(MAX_HALVINGS):
            trial = p - step * g
            ft = float(value_fn(trial))
            if np.isfinite(ft) and ft <= f:
                accepted = (trial, ft)
                break
            step *= 0.5
        if accepted is None:
            break
        p, f = accepted
    return p, f
