"""Numeric primitives with explicit forward caches and exact backward passes.

Everything operates on float64 arrays over the last axis unless noted.
Backward functions consume the cache returned by the matching forward.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-12
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    dx = dout @ w.T
    # collapse all leading axes onto the weight shape
    dw = x.reshape(-1, x.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dx, dw, db


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gain + bias
    return out, (xhat, inv, gain)


def layer_norm_backward(dout, cache):
    xhat, inv, gain = cache
    dxhat = dout * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    dgain = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbias = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dx, dgain, dbias


def gelu_forward(x):
    # tanh approximation, as in the original BERT implementation
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dout, cache):
    x, t = cache
    du_dx = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du_dx)


def softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dout, probs):
    # dL/dx_i = p_i * (dL/dp_i - sum_j dL/dp_j p_j)
    inner = (dout * probs).sum(axis=-1, keepdims=True)
    return probs * (dout - inner)


def log_softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def dropout_forward(x, rate, rng):
    """Inverted dropout; identity when rate == 0 or no rng supplied."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, keep):
    if keep is None:
        return dout
    return dout * keep


def cross_entropy_rows(logits, targets):
    """Mean cross-entropy over rows plus the exact logits gradient.

    logits: (n, K); targets: (n,) int. The returned gradient is for the
    MEAN loss, i.e. (softmax - onehot) / n per row.
    """
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax_last(logits)
    loss = -logp[np.arange(n), targets].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return float(loss), dlogits
