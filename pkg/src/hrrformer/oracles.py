"""FFT-free reference computations used to cross-check the fast paths.

Everything here works on plain float64 numpy arrays with explicit sums or
dense linear solves, and never touches :mod:`hrrformer.fft`.
"""

from __future__ import annotations

import numpy as np


def direct_circular_conv(x, y) -> np.ndarray:
    """``out[n] = sum_k x[k] * y[(n - k) mod H]`` along the last axis, O(H^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    H = x.shape[-1]
    x, y = np.broadcast_arrays(x, y)
    k = np.arange(H)
    out = np.zeros(x.shape)
    for n in range(H):
        out[..., n] = (x * y[..., (n - k) % H]).sum(axis=-1)
    return out


def circulant(x) -> np.ndarray:
    """Matrix ``C`` with ``C @ y == direct_circular_conv(x, y)``."""
    x = np.asarray(x, dtype=np.float64)
    H = len(x)
    return np.array([[x[(n - k) % H] for k in range(H)] for n in range(H)])


def solve_inverse(y) -> np.ndarray:
    """The vector ``z`` with ``y (*) z == e0``, by a dense linear solve."""
    y = np.asarray(y, dtype=np.float64)
    e0 = np.zeros(len(y))
    e0[0] = 1.0
    return np.linalg.solve(circulant(y), e0)


def cosine(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def reference_hrr_attention(q, k, v, mask=None) -> tuple:
    """Loop-by-loop HRR attention on (B, h, T, H') arrays; returns (values, weights)."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    B, h, T, _ = q.shape
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
    values = np.zeros_like(v)
    weights = np.zeros((B, h, T, 1))
    for b in range(B):
        for j in range(h):
            beta = sum(m[b, t] * direct_circular_conv(k[b, j, t], v[b, j, t]) for t in range(T))
            logits = np.empty(T)
            for t in range(T):
                v_hat = direct_circular_conv(solve_inverse(q[b, j, t]), beta)
                logits[t] = cosine(v[b, j, t], v_hat) + (1.0 - m[b, t]) * -1e9
            e = np.exp(logits - logits.max())
            w = e / e.sum()
            weights[b, j, :, 0] = w
            values[b, j] = w[:, None] * v[b, j]
    return values, weights


def reference_dot_attention(q, k, v) -> tuple:
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    w = e / e.sum(axis=-1, keepdims=True)
    return w @ v, w
