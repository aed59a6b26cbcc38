"""Numpy implementation of the recurrent value-model kernels.

Gate layout along the last axis of the fused weight matrices is
[input, forget, candidate, output], each of width H.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(X, Wx, Wh, b, w, b_out):
    """Sum of per-timestep readouts for a batch of sequences.

    X: [B, T, F];  returns raw [B] with raw_b = sum_t (h_t . w + b_out).
    """
    B, T, _ = X.shape
    H = w.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    raw = np.full(B, T * b_out, dtype=np.float64)
    for t in range(T):
        z = X[:, t, :] @ Wx + h @ Wh + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        raw += h @ w
    return raw


def lstm_forward_cached(X, Wx, Wh, b, w, b_out):
    """Forward pass keeping the per-timestep activations for BPTT."""
    B, T, _ = X.shape
    H = w.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    raw = np.full(B, T * b_out, dtype=np.float64)
    cache = []
    for t in range(T):
        z = X[:, t, :] @ Wx + h @ Wh + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev = c
        h_prev = h
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        raw += h @ w
        cache.append((i, f, g, o, c_prev, h_prev, tc, h))
    return raw, cache


def lstm_backward(X, Wx, Wh, w, cache, d_raw):
    """Gradients of sum_b d_raw_b * raw_b w.r.t. all parameters."""
    B, T, F = X.shape
    H = w.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dw = np.zeros(H)
    db_out = T * d_raw.sum()
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc, h = cache[t]
        dw += h.T @ d_raw
        dh = w[None, :] * d_raw[:, None] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dWx += X[:, t, :].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh_next = dz @ Wh.T
    return dWx, dWh, db, dw, db_out
