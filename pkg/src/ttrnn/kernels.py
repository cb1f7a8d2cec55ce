"""Batched contraction kernels with a numba fast path.

The TT forward/backward sweeps reduce to two primitives applied once per
core:

* ``batch_matmul(w, z)``  -> ``out[i] = w @ z[i]``
* ``accum_outer(dout, z)`` -> ``sum_i dout[i] @ z[i].T``

Both exist twice: a plain-numpy version (one broadcast matmul/tensordot
call) and a numba ``@njit`` version that loops over the batch with ``dot``
calls. Which wins depends on the machine's BLAS and core count; the bench
command's ``compare_backends`` mode measures both on identical inputs. The
active backend is chosen once at import from the ``TTRNN_BACKEND``
environment variable:

* ``auto``  (default) - numba when importable, else numpy
* ``numpy`` - force the fallback
* ``numba`` - require the fast path; raise if numba is missing

Arrays handed to the numba kernels must be C-contiguous float64; the sweep
code guarantees this, outside callers should go through the wrappers.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def _batch_matmul_numpy(w, z):
    return np.matmul(w, z)


def _accum_outer_numpy(dout, z):
    return np.tensordot(dout, z, axes=((0, 2), (0, 2)))


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _batch_matmul_numba(w, z):  # pragma: no cover - exercised via wrapper
        b = z.shape[0]
        out = np.empty((b, w.shape[0], z.shape[2]))
        for i in range(b):
            out[i] = np.dot(w, z[i])
        return out

    @numba.njit(cache=True)
    def _accum_outer_numba(dout, z):  # pragma: no cover - exercised via wrapper
        acc = np.zeros((dout.shape[1], z.shape[1]))
        for i in range(dout.shape[0]):
            acc += np.dot(dout[i], z[i].T)
        return acc


def _resolve_backend() -> str:
    name = os.environ.get("TTRNN_BACKEND", "auto").strip().lower()
    if name not in ("auto", "numpy", "numba"):
        raise ConfigError(f"TTRNN_BACKEND must be auto|numpy|numba, got {name!r}")
    if name == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("TTRNN_BACKEND=numba but numba is not importable")
    return name


BACKEND = _resolve_backend()


def get_kernels(backend: str | None = None):
    """Return ``(batch_matmul, accum_outer)`` for ``backend`` (default: active)."""
    name = BACKEND if backend is None else backend
    if name == "numpy":
        return _batch_matmul_numpy, _accum_outer_numpy
    if name == "numba":
        if not HAVE_NUMBA:
            raise ConfigError("numba backend requested but numba is not importable")
        return _batch_matmul_numba, _accum_outer_numba
    raise ConfigError(f"unknown backend {name!r}")


_ACTIVE = get_kernels()


def batch_matmul(w, z):
    """out[i] = w @ z[i] for a stack of matrices z, via the active backend."""
    return _ACTIVE[0](np.ascontiguousarray(w), np.ascontiguousarray(z))


def accum_outer(dout, z):
    """sum_i dout[i] @ z[i].T, via the active backend."""
    return _ACTIVE[1](np.ascontiguousarray(dout), np.ascontiguousarray(z))
