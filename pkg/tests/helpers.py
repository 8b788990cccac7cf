"""Shared test utilities."""
import numpy as np


def central_difference(f, x, rel_step=1e-6):
    """Derivative of a scalar function by a central difference with step 1e-6 * scale."""
    h = rel_step * max(1.0, abs(x))
    return (f(x + h) - f(x - h)) / (2 * h)


def gradient_fd(f, v, rel_step=1e-6, order=2):
    """Central-difference gradient of f: R^d -> R.

    ``order=4`` uses the five-point stencil, which tolerates a larger step and
    so loses far less to cancellation when |f| is large.
    """
    v = np.asarray(v, dtype=float)
    g = np.empty_like(v)
    for i in range(v.size):
        h = rel_step * max(1.0, abs(v[i]))

        def at(k):
            w = v.copy()
            w[i] += k * h
            return f(w)

        if order == 4:
            g[i] = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * h)
        else:
            g[i] = (at(1) - at(-1)) / (2 * h)
    return g


def relative_error(a, b, floor=1.0):
    """Max of |a - b| / max(|b|, floor) elementwise."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))
