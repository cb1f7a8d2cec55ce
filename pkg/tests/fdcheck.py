"""Shared finite-difference gradient oracle for the test suite."""

import numpy as np


def numeric_grad(f, x, h=1e-5):
    """Centered-difference gradient of scalar ``f()`` wrt array ``x``.

    ``f`` must read ``x`` afresh on every call; this perturbs ``x`` in place
    one element at a time and restores it.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, numeric, rtol=1e-5, atol=1e-7):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
