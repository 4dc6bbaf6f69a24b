"""SGD with momentum plus the 2D-head gradient multiplier."""

from __future__ import annotations

import numpy as np

from .model import TWO_D_HEADS


class SGDMomentum:
    """v <- mu * v + g; theta <- theta - lr * mult * v.

    mult is the head gradient multiplier for the 1x1 conv weights of the
    heatmap/offsets/segment heads, 1 everywhere else.
    """

    def __init__(self, param_names, lr: float, momentum: float, head_multiplier: float = 10.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray | None] = {n: None for n in param_names}
        self.multiplier = {
            n: head_multiplier if self._is_boosted(n) else 1.0 for n in param_names
        }

    @staticmethod
    def _is_boosted(name: str) -> bool:
        return any(name == f"head_{h}/w" for h in TWO_D_HEADS)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            v = self.velocity[name]
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p -= (self.lr * self.multiplier[name]) * v
