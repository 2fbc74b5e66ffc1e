"""Numerically stable scalar activations shared across the package."""

import numpy as np


def softplus(x):
    """log(1 + e^x), safe for large |x|."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus; y must be > 0."""
    y = np.asarray(y, dtype=np.float64)
    return np.log(np.expm1(y))


def sigmoid(x):
    """1 / (1 + e^-x), safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    """Inverse of sigmoid; p must be in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def d_softplus(x):
    """Derivative of softplus, which is the sigmoid."""
    return sigmoid(x)


def d_sigmoid_from_value(s):
    """Derivative of sigmoid expressed through its output value s."""
    return s * (1.0 - s)
