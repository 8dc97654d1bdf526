"""Holographic reduced representations over real vectors.

Symbols are length-H real vectors (H a power of two).  Binding is
circular convolution, the inverse is the exact spectral reciprocal, and
a set of bound pairs is stored by plain summation.  Every operation here
is differentiable and batches over leading axes when given tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from . import fft
from .errors import ConfigError, ContractError, DimensionError, SingularInverseError
from .tensor import Tensor, _unbroadcast, as_tensor, default_dtype, make_op, rfft_circular_conv

EPS_INV = 1e-8
COSINE_EPS = 1e-12

_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64 stream.

    ``stream`` selects an independent sub-stream of the same seed; stream 0
    reproduces the textbook generator seeded with ``seed``.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        offset = int(_mix64(np.array([self.stream * _GAMMA & _MASK64], dtype=np.uint64))[0])
        self._state = self.seed ^ offset
        self._count = 0

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self._state) + steps * np.uint64(_GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals by Box-Muller, two per uniform pair."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


@dataclass
class HrrSymbol:
    vec: Tensor

    def __post_init__(self):
        self.vec = as_tensor(self.vec)
        if self.vec.ndim != 1:
            raise DimensionError(f"a symbol is a 1-D vector, got shape {self.vec.shape}")
        _check_dim(self.vec.shape[0])

    @property
    def H(self) -> int:
        return self.vec.shape[0]


@dataclass
class Superposition:
    vec: Tensor
    count: int

    @property
    def H(self) -> int:
        return self.vec.shape[-1]


SymbolLike = Union[HrrSymbol, Superposition, Tensor, np.ndarray]


def _check_dim(H: int) -> None:
    if H < 2 or not fft.is_power_of_two(H):
        raise ConfigError(f"symbol dimension must be a power of two >= 2, got {H}")


def _vec(x: SymbolLike) -> Tensor:
    if isinstance(x, (HrrSymbol, Superposition)):
        return x.vec
    return as_tensor(x)


def _wrap(result: Tensor, *inputs) -> Union[HrrSymbol, Tensor]:
    if any(isinstance(i, (HrrSymbol, Superposition)) for i in inputs) and result.ndim == 1:
        return HrrSymbol(result)
    return result


def sample_symbol(H: int, rng: Union[SplitMix64, int], dtype=None) -> HrrSymbol:
    """Draw a symbol with i.i.d. N(0, 1/H) entries."""
    _check_dim(H)
    if not isinstance(rng, SplitMix64):
        rng = SplitMix64(rng)
    return HrrSymbol(Tensor(rng.normal(H) / np.sqrt(H), dtype=dtype or default_dtype()))


def identity(H: int, dtype=None) -> HrrSymbol:
    """The convolution identity e0 = [1, 0, ..., 0]."""
    _check_dim(H)
    e = np.zeros(H)
    e[0] = 1.0
    return HrrSymbol(Tensor(e, dtype=dtype or default_dtype()))


def bind(x: SymbolLike, y: SymbolLike):
    return _wrap(rfft_circular_conv(_vec(x), _vec(y)), x, y)


def guard_spectrum(spec: np.ndarray, eps: float, clamp: bool) -> np.ndarray:
    """Enforce ``|spec| >= eps`` bin-wise, by raising or by phase-preserving clamping."""
    mag = np.abs(spec)
    small = mag < eps
    if not small.any():
        return spec
    if not clamp:
        flat = int(np.argmin(mag))
        bin_index = flat % spec.shape[-1]
        raise SingularInverseError(bin_index, float(mag.reshape(-1)[flat]), eps)
    phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1.0), 1.0)
    return np.where(small, phase * eps, spec).astype(spec.dtype)


def _inverse_backward(g: np.ndarray, inv_spec: np.ndarray, n: int) -> np.ndarray:
    # d(y^dagger) = -(y^dagger * y^dagger) (*) dy, so the adjoint correlates with that square
    return -fft.irfft(fft.rfft(g) * np.conj(inv_spec * inv_spec), n)


def exact_inverse(y: SymbolLike, eps: float = EPS_INV, clamp: bool = False):
    """The vector whose spectrum is the reciprocal of ``y``'s spectrum.

    Raises :class:`SingularInverseError` if any frequency magnitude is below
    ``eps``, unless ``clamp`` is set, in which case such bins are scaled up
    to magnitude ``eps`` keeping their phase.
    """
    t = _vec(y)
    n = t.shape[-1]
    inv_spec = 1.0 / guard_spectrum(fft.rfft(t.data), eps, clamp)
    out = make_op(fft.irfft(inv_spec, n), "exact_inverse", (t,),
                  lambda g: (_inverse_backward(g, inv_spec, n),))
    return _wrap(out, y)


def unbind(beta: SymbolLike, q: SymbolLike, eps: float = EPS_INV, clamp: bool = False):
    """Retrieve what was bound to ``q`` in ``beta``: exact_inverse(q) bound with beta."""
    q_inv = _vec(exact_inverse(_vec(q), eps, clamp))
    return _wrap(rfft_circular_conv(q_inv, _vec(beta)), beta, q)


def superpose(pairs: Iterable[tuple]) -> Superposition:
    """Sum of ``bind(k, v)`` over the given (key, value) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("superpose needs at least one (key, value) pair")
    dims = {_vec(t).shape[-1] for kv in pairs for t in kv}
    if len(dims) != 1:
        raise DimensionError(f"all symbols must share one dimension, got {sorted(dims)}")
    total = None
    for k, v in pairs:
        b = rfft_circular_conv(_vec(k), _vec(v))
        total = b if total is None else total + b
    return Superposition(total, len(pairs))


def cosine_similarity(u: SymbolLike, v: SymbolLike, keepdims: bool = False,
                      eps: float = COSINE_EPS) -> Tensor:
    """Cosine of the angle between ``u`` and ``v`` along the last axis.

    Returns 0 wherever either norm is below ``eps``; those entries carry
    zero gradient.
    """
    u, v = _vec(u), _vec(v)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"cosine needs equal trailing extents, got {u.shape} and {v.shape}")
    ud, vd = u.data, v.data
    dot = (ud * vd).sum(axis=-1, keepdims=True)
    nu = np.sqrt((ud * ud).sum(axis=-1, keepdims=True))
    nv = np.sqrt((vd * vd).sum(axis=-1, keepdims=True))
    ok = (nu >= eps) & (nv >= eps)
    denom = np.where(ok, nu * nv, 1.0)
    cos = np.where(ok, dot / denom, 0.0).astype(np.result_type(ud, vd))
    out = cos if keepdims else cos[..., 0]

    def backward(g):
        if not keepdims:
            g = g[..., None]
        g = np.where(ok, g, 0.0)
        gu = g * (vd / denom - cos * ud / np.where(ok, nu * nu, 1.0))
        gv = g * (ud / denom - cos * vd / np.where(ok, nv * nv, 1.0))
        return _unbroadcast(gu, ud.shape), _unbroadcast(gv, vd.shape)

    return make_op(out, "cosine_similarity", (u, v), backward)
