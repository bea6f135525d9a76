from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergedError


class SGDMomentum:
    """Heavy-ball SGD updating a list of arrays in place.

    ``clip_norm`` rescales the joint gradient when its global L2 norm
    exceeds the threshold.
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> float:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if not np.isfinite(norm):
            raise TrainingDivergedError("non-finite gradient")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += scale * g
            p -= self.lr * v
        return norm
