"""Adam with bias correction, plus global gradient-norm clipping.

Parameters and gradients travel as ``dict[str, ndarray]`` with matching
keys; the optimizer updates the parameter arrays in place so every layer
holding a view sees the step immediately.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def global_norm(grads: dict) -> float:
    """L2 norm of all gradient arrays stacked into one vector."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their joint norm is <= max_norm.

    Returns the pre-clip norm. No-op when already within bounds.
    """
    if max_norm <= 0:
        raise ShapeError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    """First/second-moment adaptive step with bias correction.

    m <- b1 m + (1-b1) g ; v <- b2 v + (1-b2) g^2
    theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p) for k, p in self.params.items()}

    def step(self, grads: dict) -> None:
        if set(grads) != set(self.params):
            missing = set(self.params) ^ set(grads)
            raise ShapeError(f"grad keys do not match param keys: {sorted(missing)}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ShapeError(f"grad {k} has shape {g.shape}, param {p.shape}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        """Serializable state: step count and both moment sets."""
        out = {"t": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, state: dict) -> None:
        want = set(self.state())
        if set(state) != want:
            raise ShapeError("optimizer state keys do not match this parameter set")
        self.t = int(state["t"][0])
        for k in self.params:
            self.m[k][...] = state[f"m.{k}"]
            self.v[k][...] = state[f"v.{k}"]
