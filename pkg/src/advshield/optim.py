"""SGD with classical momentum, operating on flat float32 parameter vectors."""

from __future__ import annotations

import numpy as np


class MomentumSGD:
    """v <- mu*v + g;  p <- p - lr*v.

    State lives on the optimizer so a training loop can hand in the same
    flat parameter vector every step.
    """

    def __init__(self, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Apply one update in place and return params for convenience."""
        if params.shape != grads.shape:
            raise ValueError(f"params/grads shape mismatch: {params.shape} vs {grads.shape}")
        if self._velocity is None:
            self._velocity = np.zeros_like(params)
        v = self._velocity
        v *= self.momentum
        v += grads
        params -= (self.lr * v).astype(params.dtype, copy=False)
        return params
