"""Bias-corrected Adam."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


class AdamState:
    """First/second moments per parameter, a shared step counter, and the
    hyperparameters (lr, beta1, beta2, eps)."""

    def __init__(self, lr=0.001, beta1=0.0, beta2=0.99, eps=1e-8):
        if lr <= 0:
            raise ShapeMismatch(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params, state: AdamState, grads=None):
    """One Adam update over a named parameter collection.

    Parameters
    ----------
    params : ParamStore or dict name -> Tensor
        Updated in place.
    state : AdamState
        Moments are created lazily per parameter; `t` increments once per call.
    grads : optional dict name -> ndarray
        Defaults to each tensor's accumulated `.grad`; a missing/None gradient
        counts as zero.

    Returns the (params, state) pair for chaining.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=p.dtype)
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient for {name!r}: {g.shape} != {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
