"""Recurrent cells over interchangeable dense/TT affine maps, plus the
sequence unroll and its exact backward pass.

Cells own one shared bias vector per gate; the affine maps inside a cell are
biasless so a gate's bias is not stored twice (a TT map and a dense map then
count parameters on equal footing). Hidden activations are tanh, gates are
logistic sigmoid, and the initial hidden state is zero unless a caller
passes one.

Padded timesteps are handled by a per-step {0,1} mask: a masked-out step
leaves the hidden state untouched and contributes nothing to any gradient,
so batches of unequal-length sequences train exactly as if each sequence
were processed alone.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .linear import LinearMap


def sigmoid(x):
    # Evaluate on the negative half-line only, so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_state(h, dim: int, what: str) -> np.ndarray:
    h = np.ascontiguousarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != dim:
        raise ShapeError(f"{what} must have shape (B, {dim}), got {h.shape}")
    return h


def _check_mask(mask, batch: int):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (batch,):
        raise ShapeError(f"mask must have shape ({batch},), got {mask.shape}")
    return mask.reshape(batch, 1)


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


class Cell:
    """Interface shared by the recurrent cells."""

    input_dim: int
    hidden_dim: int

    def step(self, x_t, h_prev, mask_t=None):
        """One timestep: returns ``(h_t, cache)``."""
        raise NotImplementedError

    def step_backward(self, grad_h, cache):
        """Backward through one step: returns ``(grad_x_t, grad_h_prev)``
        and accumulates parameter gradients."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def grads(self) -> dict:
        raise NotImplementedError

    def named_maps(self) -> dict:
        """Linear maps by the same names ``params()`` prefixes with."""
        raise NotImplementedError

    def named_arrays(self) -> dict:
        """Bare parameter arrays (biases) owned by the cell itself."""
        raise NotImplementedError

    def zero_grads(self):
        for g in self.grads().values():
            g[...] = 0.0

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())


class SRNNCell(Cell):
    """h_t = tanh(W_xh x_t + W_hh h_{t-1} + b)."""

    def __init__(self, wx: LinearMap, wh: LinearMap, bias):
        if wx.out_dim != wh.out_dim or wh.in_dim != wh.out_dim:
            raise ShapeError(
                f"map dims disagree: wx {wx.out_dim}, wh {wh.in_dim}->{wh.out_dim}"
            )
        if getattr(wx, "bias", None) is not None or getattr(wh, "bias", None) is not None:
            raise ShapeError("cell maps must be biasless; the cell owns the gate bias")
        self.wx = wx
        self.wh = wh
        self.input_dim = wx.in_dim
        self.hidden_dim = wx.out_dim
        self.bias = np.ascontiguousarray(bias, dtype=np.float64)
        if self.bias.shape != (self.hidden_dim,):
            raise ShapeError(f"bias must have shape ({self.hidden_dim},)")
        self.grad_bias = np.zeros_like(self.bias)

    def step(self, x_t, h_prev, mask_t=None):
        x_t = _check_state(x_t, self.input_dim, "x_t")
        h_prev = _check_state(h_prev, self.hidden_dim, "h_prev")
        mask = _check_mask(mask_t, x_t.shape[0])
        ax, cx = self.wx.forward_cached(x_t)
        ah, ch = self.wh.forward_cached(h_prev)
        cand = np.tanh(ax + ah + self.bias)
        if mask is None:
            h_t = cand
        else:
            h_t = mask * cand + (1.0 - mask) * h_prev
        return h_t, (cx, ch, cand, mask)

    def step_backward(self, grad_h, cache):
        cx, ch, cand, mask = cache
        grad_h = _check_state(grad_h, self.hidden_dim, "grad_h")
        if mask is None:
            da = grad_h * (1.0 - cand * cand)
            skip = 0.0
        else:
            da = mask * grad_h * (1.0 - cand * cand)
            skip = (1.0 - mask) * grad_h
        self.grad_bias += da.sum(axis=0)
        grad_x = self.wx.backward(da, cx)
        grad_h_prev = self.wh.backward(da, ch) + skip
        return grad_x, grad_h_prev

    def params(self):
        out = _prefixed("wx", self.wx.params())
        out.update(_prefixed("wh", self.wh.params()))
        out["bias"] = self.bias
        return out

    def grads(self):
        out = _prefixed("wx", self.wx.grads())
        out.update(_prefixed("wh", self.wh.grads()))
        out["bias"] = self.grad_bias
        return out

    def named_maps(self):
        return {"wx": self.wx, "wh": self.wh}

    def named_arrays(self):
        return {"bias": self.bias}


class GRUCell(Cell):
    """Gated cell with the reset gate applied before the hidden-to-hidden map.

    r_t = sig(W_xr x_t + W_hr h_{t-1} + b_r)
    z_t = sig(W_xz x_t + W_hz h_{t-1} + b_z)
    c_t = tanh(W_xh x_t + W_hh (r_t * h_{t-1}) + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
    """

    GATES = ("r", "z", "h")

    def __init__(self, wx: dict, wh: dict, biases: dict):
        for group, maps in (("wx", wx), ("wh", wh)):
            if set(maps) != set(self.GATES):
                raise ShapeError(f"{group} must have exactly gates {self.GATES}")
        self.wx = wx
        self.wh = wh
        self.input_dim = wx["h"].in_dim
        self.hidden_dim = wx["h"].out_dim
        for g in self.GATES:
            if wx[g].in_dim != self.input_dim or wx[g].out_dim != self.hidden_dim:
                raise ShapeError(f"wx[{g}] dims disagree with wx[h]")
            if wh[g].in_dim != self.hidden_dim or wh[g].out_dim != self.hidden_dim:
                raise ShapeError(f"wh[{g}] must map hidden to hidden")
            if getattr(wx[g], "bias", None) is not None or getattr(wh[g], "bias", None) is not None:
                raise ShapeError("cell maps must be biasless; the cell owns gate biases")
        if set(biases) != set(self.GATES):
            raise ShapeError(f"biases must have exactly gates {self.GATES}")
        self.bias = {}
        self.grad_bias = {}
        for g in self.GATES:
            b = np.ascontiguousarray(biases[g], dtype=np.float64)
            if b.shape != (self.hidden_dim,):
                raise ShapeError(f"bias[{g}] must have shape ({self.hidden_dim},)")
            self.bias[g] = b
            self.grad_bias[g] = np.zeros_like(b)

    def step(self, x_t, h_prev, mask_t=None):
        x_t = _check_state(x_t, self.input_dim, "x_t")
        h_prev = _check_state(h_prev, self.hidden_dim, "h_prev")
        mask = _check_mask(mask_t, x_t.shape[0])
        ar, cxr = self.wx["r"].forward_cached(x_t)
        br, chr_ = self.wh["r"].forward_cached(h_prev)
        r = sigmoid(ar + br + self.bias["r"])
        az, cxz = self.wx["z"].forward_cached(x_t)
        bz, chz = self.wh["z"].forward_cached(h_prev)
        z = sigmoid(az + bz + self.bias["z"])
        s = r * h_prev
        ac, cxh = self.wx["h"].forward_cached(x_t)
        bc, chh = self.wh["h"].forward_cached(s)
        c = np.tanh(ac + bc + self.bias["h"])
        h_new = (1.0 - z) * h_prev + z * c
        if mask is None:
            h_t = h_new
        else:
            h_t = mask * h_new + (1.0 - mask) * h_prev
        cache = (cxr, chr_, cxz, chz, cxh, chh, r, z, c, h_prev, mask)
        return h_t, cache

    def step_backward(self, grad_h, cache):
        cxr, chr_, cxz, chz, cxh, chh, r, z, c, h_prev, mask = cache
        grad_h = _check_state(grad_h, self.hidden_dim, "grad_h")
        if mask is None:
            gm = grad_h
            skip = 0.0
        else:
            gm = mask * grad_h
            skip = (1.0 - mask) * grad_h
        dz = gm * (c - h_prev)
        dc = gm * z
        dh_prev = gm * (1.0 - z)
        # Candidate branch (tanh).
        dac = dc * (1.0 - c * c)
        self.grad_bias["h"] += dac.sum(axis=0)
        grad_x = self.wx["h"].backward(dac, cxh)
        ds = self.wh["h"].backward(dac, chh)
        dr = ds * h_prev
        dh_prev = dh_prev + ds * r
        # Update gate (sigmoid).
        daz = dz * z * (1.0 - z)
        self.grad_bias["z"] += daz.sum(axis=0)
        grad_x += self.wx["z"].backward(daz, cxz)
        dh_prev += self.wh["z"].backward(daz, chz)
        # Reset gate (sigmoid).
        dar = dr * r * (1.0 - r)
        self.grad_bias["r"] += dar.sum(axis=0)
        grad_x += self.wx["r"].backward(dar, cxr)
        dh_prev += self.wh["r"].backward(dar, chr_)
        return grad_x, dh_prev + skip

    def params(self):
        out = {}
        for g in self.GATES:
            out.update(_prefixed(f"wx{g}", self.wx[g].params()))
            out.update(_prefixed(f"wh{g}", self.wh[g].params()))
            out[f"bias_{g}"] = self.bias[g]
        return out

    def grads(self):
        out = {}
        for g in self.GATES:
            out.update(_prefixed(f"wx{g}", self.wx[g].grads()))
            out.update(_prefixed(f"wh{g}", self.wh[g].grads()))
            out[f"bias_{g}"] = self.grad_bias[g]
        return out

    def named_maps(self):
        out = {}
        for g in self.GATES:
            out[f"wx{g}"] = self.wx[g]
            out[f"wh{g}"] = self.wh[g]
        return out

    def named_arrays(self):
        return {f"bias_{g}": self.bias[g] for g in self.GATES}


def unroll(cell: Cell, x_seq, mask=None, h0=None):
    """Run ``cell`` over ``x_seq`` of shape (T, B, D).

    Returns ``(h_seq, caches)`` with ``h_seq`` of shape (T, B, H);
    ``caches`` feeds :func:`bptt`. ``mask``, if given, has shape (T, B).
    """
    x_seq = np.ascontiguousarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 3 or x_seq.shape[2] != cell.input_dim:
        raise ShapeError(
            f"x_seq must have shape (T, B, {cell.input_dim}), got {x_seq.shape}"
        )
    steps, batch = x_seq.shape[:2]
    if steps == 0:
        raise ShapeError("sequence must have at least one timestep")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (steps, batch):
            raise ShapeError(f"mask must have shape ({steps}, {batch})")
    if h0 is None:
        h = np.zeros((batch, cell.hidden_dim))
    else:
        h = _check_state(h0, cell.hidden_dim, "h0")
    h_seq = np.empty((steps, batch, cell.hidden_dim))
    caches = []
    for t in range(steps):
        h, cache = cell.step(x_seq[t], h, None if mask is None else mask[t])
        h_seq[t] = h
        caches.append(cache)
    return h_seq, caches


def bptt(cell: Cell, caches, grad_h_seq=None, grad_h_last=None):
    """Exact backward pass through an unroll.

    ``grad_h_seq`` (T, B, H) carries per-timestep gradients from losses that
    read every hidden state; ``grad_h_last`` (B, H) adds a gradient on the
    final state only. At least one must be given. Parameter gradients
    accumulate into the cell; returns ``grad_x_seq`` of shape (T, B, D).
    """
    steps = len(caches)
    if grad_h_seq is None and grad_h_last is None:
        raise ShapeError("need grad_h_seq and/or grad_h_last")
    carry = 0.0 if grad_h_last is None else np.asarray(grad_h_last, dtype=np.float64)
    grad_x_seq = None
    for t in range(steps - 1, -1, -1):
        g = carry if grad_h_seq is None else grad_h_seq[t] + carry
        grad_x, carry = cell.step_backward(np.asarray(g, dtype=np.float64), caches[t])
        if grad_x_seq is None:
            grad_x_seq = np.empty((steps,) + grad_x.shape)
        grad_x_seq[t] = grad_x
    return grad_x_seq
