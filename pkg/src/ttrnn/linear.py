"""Affine maps with interchangeable dense and tensor-train weight storage.

Both variants expose the same contract:

* ``forward(x)`` for inference,
* ``forward_cached(x) -> (y, cache)`` when gradients will be needed,
* ``backward(grad_out, cache) -> grad_x``, which also accumulates parameter
  gradients into the layer's ``grads()`` arrays.

Caches are explicit values rather than hidden layer state so a recurrent
unroll can apply one layer at many timesteps and replay the caches in
reverse order during backpropagation.

The TT forward never materializes the full matrix. With ``x`` of shape
``(B, N)`` it sweeps the cores left to right, carrying a batched tensor ``z``
of shape ``(B * P_k, r_{k-1} * n_k, Q_k)`` where ``P_k`` is the product of
output modes already consumed and ``Q_k`` the product of input modes not yet
consumed. Each step is one batched matmul against the core reshaped to
``(m_k * r_k, r_{k-1} * n_k)``; every regrouping between steps is a plain
C-order reshape, which is what makes the row-major index convention load
bearing. Cost is O(d r^2 m max(M, N)) per sample instead of O(M N).

The backward pass replays the same chain in reverse with the cached ``z``
inputs, so parameter and input gradients are exact (they are the analytic
derivatives of the contraction, not an approximation).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .kernels import get_kernels
from .ttmatrix import TTMatrix, TTSpec


def _check_batch(x, dim: int, what: str) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have shape (B, {dim}), got {x.shape}")
    return x


class LinearMap:
    """Shared interface; see module docstring for the contract."""

    in_dim: int
    out_dim: int

    def forward(self, x):
        return self.forward_cached(x)[0]

    def forward_cached(self, x):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def grads(self) -> dict:
        raise NotImplementedError

    def zero_grads(self):
        for g in self.grads().values():
            g[...] = 0.0

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())


class DenseLinear(LinearMap):
    """y = x @ W.T (+ b) with an explicitly stored matrix."""

    def __init__(self, weight, bias=None):
        self.weight = np.ascontiguousarray(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be 2-D, got shape {self.weight.shape}")
        self.out_dim, self.in_dim = self.weight.shape
        if bias is None:
            self.bias = None
        else:
            self.bias = np.ascontiguousarray(bias, dtype=np.float64)
            if self.bias.shape != (self.out_dim,):
                raise ShapeError(
                    f"bias must have shape ({self.out_dim},), got {self.bias.shape}"
                )
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @classmethod
    def glorot(cls, out_dim: int, in_dim: int, rng: np.random.Generator,
               bias: bool = True) -> "DenseLinear":
        """Glorot-normal weights; the d=1 case of the TT core init."""
        sigma = np.sqrt(2.0 / (in_dim + out_dim))
        w = rng.normal(0.0, sigma, size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim) if bias else None)

    def forward_cached(self, x):
        x = _check_batch(x, self.in_dim, "input")
        y = x @ self.weight.T
        if self.bias is not None:
            y += self.bias
        return y, x

    def backward(self, grad_out, cache):
        grad_out = _check_batch(grad_out, self.out_dim, "grad_out")
        x = cache
        self.grad_weight += grad_out.T @ x
        if self.grad_bias is not None:
            self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def grads(self):
        out = {"weight": self.grad_weight}
        if self.grad_bias is not None:
            out["bias"] = self.grad_bias
        return out


class TTLinear(LinearMap):
    """y = x @ W.T (+ b) with W held in TT format and never materialized.

    ``backend`` pins this layer's contraction kernels to ``numpy`` or
    ``numba``; the default follows the process-wide TTRNN_BACKEND choice.
    """

    def __init__(self, tt: TTMatrix, bias=None, backend: str | None = None):
        self.tt = tt
        self._batch_matmul, self._accum_outer = get_kernels(backend)
        self.out_dim, self.in_dim = tt.shape
        if bias is None:
            self.bias = None
        else:
            self.bias = np.ascontiguousarray(bias, dtype=np.float64)
            if self.bias.shape != (self.out_dim,):
                raise ShapeError(
                    f"bias must have shape ({self.out_dim},), got {self.bias.shape}"
                )
        self.grad_cores = [np.zeros_like(g) for g in tt.cores]
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @classmethod
    def glorot(cls, spec: TTSpec, rng: np.random.Generator, bias: bool = True,
               backend: str | None = None) -> "TTLinear":
        tt = TTMatrix.glorot(spec, rng)
        return cls(tt, np.zeros(spec.out_dim) if bias else None, backend=backend)

    def _core_matrices(self):
        # Core k as a (m_k r_k, r_{k-1} n_k) matrix: rows enumerate (m_k, r_k),
        # columns enumerate (r_{k-1}, n_k), both row-major.
        return [
            np.ascontiguousarray(
                g.transpose(0, 3, 2, 1).reshape(g.shape[0] * g.shape[3],
                                                g.shape[2] * g.shape[1])
            )
            for g in self.tt.cores
        ]

    def forward_cached(self, x):
        x = _check_batch(x, self.in_dim, "input")
        spec = self.tt.spec
        b = x.shape[0]
        mats = self._core_matrices()
        z = x.reshape(b, spec.ranks[0] * spec.in_modes[0],
                      self.in_dim // spec.in_modes[0])
        z_inputs = []
        for k in range(spec.ndim):
            z_inputs.append(z)
            out = self._batch_matmul(mats[k], z)
            if k + 1 < spec.ndim:
                n_next = spec.in_modes[k + 1]
                batch = out.shape[0] * spec.out_modes[k]
                z = out.reshape(batch, spec.ranks[k + 1] * n_next,
                                out.shape[2] // n_next)
            else:
                y = out.reshape(b, self.out_dim)
        if self.bias is not None:
            y = y + self.bias
        return y, (mats, z_inputs, b)

    def backward(self, grad_out, cache):
        grad_out = _check_batch(grad_out, self.out_dim, "grad_out")
        spec = self.tt.spec
        mats, z_inputs, b = cache
        if grad_out.shape[0] != b:
            raise ShapeError(
                f"grad_out batch {grad_out.shape[0]} does not match cached batch {b}"
            )
        if self.grad_bias is not None:
            self.grad_bias += grad_out.sum(axis=0)
        d = spec.ndim
        # Gradient wrt the k-th sweep output, shaped like that output.
        last = z_inputs[-1]
        dout = grad_out.reshape(last.shape[0],
                                spec.out_modes[-1] * spec.ranks[-1], last.shape[2])
        for k in range(d - 1, -1, -1):
            m, n, r_prev, r_next = spec.core_shape(k)
            dmat = self._accum_outer(dout, z_inputs[k])
            self.grad_cores[k] += dmat.reshape(m, r_next, r_prev, n).transpose(0, 3, 2, 1)
            dz = self._batch_matmul(np.ascontiguousarray(mats[k].T), dout)
            if k > 0:
                prev = z_inputs[k - 1]
                dout = dz.reshape(prev.shape[0],
                                  spec.out_modes[k - 1] * spec.ranks[k],
                                  prev.shape[2])
            else:
                return dz.reshape(b, self.in_dim)

    def params(self):
        out = {f"core{k}": g for k, g in enumerate(self.tt.cores)}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def grads(self):
        out = {f"core{k}": g for k, g in enumerate(self.grad_cores)}
        if self.grad_bias is not None:
            out["bias"] = self.grad_bias
        return out
