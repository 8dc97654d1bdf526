"""HRR self-attention and a naive dot-product baseline.

Shapes follow the usual convention: ``B`` batch, ``T`` positions, ``H``
model width, ``h`` heads and ``H' = H / h`` per-head width.  Masks use
1 for valid positions and 0 for padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fft
from .errors import ConfigError, ContractError, DimensionError
from .hrr import EPS_INV, cosine_similarity, guard_spectrum
from .tensor import (
    Tensor,
    add,
    make_op,
    matmul,
    mul,
    reshape,
    scale,
    softmax,
    transpose,
)

MASK_BIAS = -1e9


@dataclass
class AttentionParams:
    """Bias-free square projections for query, key, value and output."""

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor

    NAMES = ("W_q", "W_k", "W_v", "W_o")

    def __post_init__(self):
        shapes = {getattr(self, n).shape for n in self.NAMES}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or len(set(next(iter(shapes)))) != 1:
            raise DimensionError(f"projections must be equal square matrices, got {sorted(shapes)}")

    @classmethod
    def init(cls, H: int, rng: np.random.Generator, dtype=np.float64) -> "AttentionParams":
        mats = [Tensor(rng.normal(0.0, 1.0 / np.sqrt(H), (H, H)), dtype=dtype, requires_grad=True)
                for _ in cls.NAMES]
        return cls(*mats)

    @property
    def H(self) -> int:
        return self.W_q.shape[0]

    def items(self):
        return [(n, getattr(self, n)) for n in self.NAMES]


@dataclass
class AttentionOutput:
    out: Tensor
    weights: Tensor


def split_heads(x: Tensor, h: int) -> Tensor:
    """(B, T, H) -> (B, h, T, H/h)."""
    B, T, H = x.shape
    if h < 1 or H % h:
        raise ConfigError(f"heads={h} must divide the feature width {H}")
    return transpose(reshape(x, (B, T, h, H // h)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, h, T, H') -> (B, T, h * H'); exact inverse of :func:`split_heads`."""
    B, h, T, Hp = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, T, h * Hp))


def as_attention_mask(mask, B: int, T: int, dtype) -> Optional[np.ndarray]:
    """Validate a binary mask given as (B, T) or (B, 1, T, 1); returns (B, 1, T, 1)."""
    if mask is None:
        return None
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.shape == (B, T):
        m = m.reshape(B, 1, T, 1)
    if m.shape != (B, 1, T, 1):
        raise ContractError(f"mask must have shape ({B}, 1, {T}, 1) or ({B}, {T}), got {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ContractError("mask entries must be 0 or 1")
    return m.astype(dtype)


def hrr_retrieve(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None,
                 eps: float = EPS_INV, clamp: bool = False) -> Tensor:
    """Per-position retrieval ``exact_inverse(q_t) (*) sum_i k_i (*) v_i``.

    The superposition runs over the position axis (-2) and skips masked
    positions.  It is formed directly in the frequency domain, so each
    position costs three forward transforms and one inverse.
    """
    n = q.shape[-1]
    ks, vs = fft.rfft(k.data), fft.rfft(v.data)
    q_inv = 1.0 / guard_spectrum(fft.rfft(q.data), eps, clamp)
    kv = ks * vs
    if mask is not None:
        kv *= mask
    beta = kv.sum(axis=-2, keepdims=True)

    def backward(g):
        gs = fft.rfft(g)
        g_beta = (gs * np.conj(q_inv)).sum(axis=-2, keepdims=True)
        if mask is not None:
            g_beta = g_beta * mask
        gk = fft.irfft(g_beta * np.conj(vs), n)
        gv = fft.irfft(g_beta * np.conj(ks), n)
        gq = -fft.irfft(gs * np.conj(beta * q_inv * q_inv), n)
        return gq, gk, gv

    return make_op(fft.irfft(beta * q_inv, n), "hrr_retrieve", (q, k, v), backward)


def hrr_scores(q: Tensor, k: Tensor, v: Tensor, mask=None, eps: float = EPS_INV,
               clamp: bool = False) -> Tensor:
    """Masked similarity logits ``cos(v_t, v_hat_t)``, shape (B, h, T, 1)."""
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise DimensionError(f"q, k, v must share one (B, h, T, H') shape, got {q.shape}, {k.shape}, {v.shape}")
    B, _, T, _ = q.shape
    m = as_attention_mask(mask, B, T, q.dtype)
    v_hat = hrr_retrieve(q, k, v, m, eps, clamp)
    scores = cosine_similarity(v, v_hat, keepdims=True)
    if m is not None:
        scores = add(scores, (1.0 - m) * MASK_BIAS)
    return scores


def hrr_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, eps: float = EPS_INV,
                  clamp: bool = False) -> tuple:
    """HRR attention on split heads.

    Returns ``(values, weights)`` where ``weights`` (B, h, T, 1) is the
    softmax over positions of the similarity logits and ``values`` scales
    each original value vector by its weight.
    """
    weights = softmax(hrr_scores(q, k, v, mask, eps, clamp), axis=-2)
    return mul(weights, v), weights


def _project(x: Tensor, params: AttentionParams, h: int) -> tuple:
    if x.ndim != 3 or x.shape[-1] != params.H:
        raise DimensionError(f"expected input (B, T, {params.H}), got {x.shape}")
    return tuple(split_heads(matmul(x, W), h) for W in (params.W_q, params.W_k, params.W_v))


def multihead_hrr_attention(x: Tensor, params: AttentionParams, h: int, mask=None,
                            clamp: bool = False) -> AttentionOutput:
    """Project, split into heads, attend, merge and project back."""
    q, k, v = _project(x, params, h)
    values, weights = hrr_attention(q, k, v, mask, clamp=clamp)
    return AttentionOutput(matmul(merge_heads(values), params.W_o), weights)


def dot_attention_baseline(q: Tensor, k: Tensor, v: Tensor, mask=None) -> tuple:
    """Scaled dot-product attention with an explicit (T, T) weight matrix."""
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise DimensionError(f"q, k, v must share one (B, h, T, H') shape, got {q.shape}, {k.shape}, {v.shape}")
    B, _, T, Hp = q.shape
    m = as_attention_mask(mask, B, T, q.dtype)
    scores = matmul(scale(q, 1.0 / np.sqrt(Hp)), transpose(k, (0, 1, 3, 2)))
    if m is not None:
        scores = add(scores, (1.0 - m.reshape(B, 1, 1, T)) * MASK_BIAS)
    weights = softmax(scores, axis=-1)
    del scores
    return matmul(weights, v), weights


def multihead_dot_attention(x: Tensor, params: AttentionParams, h: int, mask=None) -> AttentionOutput:
    q, k, v = _project(x, params, h)
    values, weights = dot_attention_baseline(q, k, v, mask)
    return AttentionOutput(matmul(merge_heads(values), params.W_o), weights)
