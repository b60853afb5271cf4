"""Shared oracles for the test suite: finite differences and tolerance rules."""

import numpy as np


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f() wrt array x.

    f closes over x and is re-evaluated after in-place perturbation.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-4, abs_small=1e-7, small=1e-6):
    """Per-coordinate relative error <= rel; absolute <= abs_small where the
    analytic value is below `small`."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    assert a.shape == n.shape
    for i in range(a.size):
        if abs(a[i]) < small:
            assert abs(a[i] - n[i]) <= abs_small, (
                f"coord {i}: analytic {a[i]!r} vs numeric {n[i]!r} (absolute rule)"
            )
        else:
            err = abs(a[i] - n[i]) / max(abs(a[i]), abs(n[i]))
            assert err <= rel, f"coord {i}: analytic {a[i]!r} vs numeric {n[i]!r} rel {err:.3e}"


def softmax_np(x, axis=-1):
    """Plain-numpy softmax used as an independent formula oracle."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)
