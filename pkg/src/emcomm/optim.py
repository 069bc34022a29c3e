"""RMSprop with global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .errors import UsageError
from .tensor import Tensor


def rmsprop_update(params, grads, state, lr=1e-4, decay=0.99, eps=1e-8):
    """One functional RMSprop step over parallel lists of arrays.

    state holds the running mean of squared gradients per parameter:
        s <- decay * s + (1 - decay) * g^2
        p <- p - lr * g / sqrt(s + eps)
    Returns (new_params, new_state); inputs are not mutated.
    """
    if not (0.0 <= decay < 1.0):
        raise UsageError("rmsprop decay must be in [0, 1)")
    new_params, new_state = [], []
    for p, g, s in zip(params, grads, state):
        s2 = decay * s + (1.0 - decay) * (g * g)
        new_state.append(s2)
        new_params.append(p - lr * g / np.sqrt(s2 + eps))
    return new_params, new_state


def clip_gradient_norm(grad_arrays, max_norm):
    """Scale the whole gradient list so its global L2 norm is <= max_norm.

    Returns (clipped_list, global_norm). No-op (same arrays) when under
    the threshold.
    """
    if max_norm <= 0:
        raise UsageError("max_norm must be positive")
    total = 0.0
    for g in grad_arrays:
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return list(grad_arrays), norm
    scale = max_norm / norm
    return [g * scale for g in grad_arrays], norm


class RmsProp:
    """Stateful wrapper around rmsprop_update keyed by parameter name."""

    def __init__(self, params: dict, lr=1e-4, decay=0.99, eps=1e-8, clip_norm=None):
        if not (0.0 <= decay < 1.0):
            raise UsageError("rmsprop decay must be in [0, 1)")
        self.params = dict(params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.clip_norm = clip_norm
        self.sq = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, grads: dict) -> float:
        """Apply one update from a Tensor-keyed gradient dict; returns pre-clip norm."""
        names = list(self.params)
        garrs = []
        for name in names:
            t = self.params[name]
            g = grads.get(t)
            garrs.append(np.zeros_like(t.data) if g is None else g)
        if self.clip_norm is not None:
            garrs, norm = clip_gradient_norm(garrs, self.clip_norm)
        else:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in garrs))
        for name, g in zip(names, garrs):
            t = self.params[name]
            s = self.sq[name]
            s *= self.decay
            s += (1.0 - self.decay) * (g * g)
            t.data -= self.lr * g / np.sqrt(s + self.eps)
        return norm

    def state_arrays(self) -> dict:
        return self.sq

    def load_state(self, sq: dict) -> None:
        for name in self.sq:
            if name not in sq:
                raise UsageError(f"optimizer state missing entry: {name}")
            self.sq[name] = np.array(sq[name], dtype=np.float64)


def check_param(t: Tensor):
    if not isinstance(t, Tensor) or not t.requires_grad:
        raise UsageError("optimizer parameters must be grad-enabled Tensors")
