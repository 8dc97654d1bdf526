"""Iterative radix-2 FFT kernels and the global transform counter.

All transforms act on the trailing axis and are batched over any leading
axes.  Lengths must be powers of two.  The counter records one call per
1-D transform, so a batched call over ``(B, T, H)`` adds ``B * T``.
"""

from __future__ import annotations

import threading
from functools import lru_cache

import numpy as np

from .errors import ConfigError

_lock = threading.Lock()
_fft_calls = 0


def fft_calls() -> int:
    """Number of 1-D real transforms (forward + inverse) since the last reset."""
    return _fft_calls


def reset_fft_counter() -> None:
    global _fft_calls
    with _lock:
        _fft_calls = 0


def _count(x: np.ndarray) -> None:
    global _fft_calls
    n = int(np.prod(x.shape[:-1], dtype=np.int64))
    with _lock:
        _fft_calls += n


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_length(n: int) -> None:
    if not is_power_of_two(n):
        raise ConfigError(f"FFT length must be a power of two, got {n}")


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool, dtype: str) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m // 2) / m).astype(dtype)


@lru_cache(maxsize=None)
def _rfft_twiddles(n: int, inverse: bool, dtype: str) -> np.ndarray:
    # e^{-+2 pi i k / n} for k = 0 .. n/2
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(n // 2 + 1) / n).astype(dtype)


def _complex_dtype(x: np.ndarray) -> str:
    return "complex64" if x.dtype in (np.float32, np.complex64) else "complex128"


def cfft(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Complex FFT along the last axis (unnormalized in both directions).

    Decimation in time: bit-reversal permutation followed by log2(n)
    butterfly stages, each vectorized over every block and batch row.
    Does not touch the transform counter.
    """
    n = z.shape[-1]
    _check_length(n)
    cdt = _complex_dtype(z)
    x = np.asarray(z, dtype=cdt)[..., _bit_reverse(n)]
    lead = x.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        blocks = x.reshape(*lead, n // m, m)
        u = blocks[..., :half]
        t = blocks[..., half:] * _twiddles(m, inverse, cdt)
        x = np.concatenate((u + t, u - t), axis=-1).reshape(*lead, n)
        m *= 2
    return x


def rfft(x: np.ndarray) -> np.ndarray:
    """Real-input FFT: ``(..., n)`` real -> ``(..., n//2 + 1)`` complex.

    The length-n real signal is packed into a length-n/2 complex signal
    (even samples real, odd samples imaginary), transformed once, and
    the two interleaved spectra are separated afterwards.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    _check_length(n)
    _count(x)
    cdt = _complex_dtype(x)
    if n == 1:
        return x.astype(cdt)
    z = cfft(x[..., 0::2] + 1j * x[..., 1::2])
    # Z[k] and conj(Z[n/2 - k]) for k = 0..n/2, with Z[n/2] == Z[0]
    zk = np.concatenate((z, z[..., :1]), axis=-1)
    zr = np.conj(zk[..., ::-1])
    even = 0.5 * (zk + zr)
    odd = -0.5j * (zk - zr)
    return even + _rfft_twiddles(n, False, cdt) * odd


def irfft(spec: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`rfft`; returns a real array of length ``n``.

    Imaginary parts of the DC and Nyquist bins are ignored.
    """
    spec = np.asarray(spec)
    _check_length(n)
    if spec.shape[-1] != n // 2 + 1:
        raise ConfigError(f"spectrum length {spec.shape[-1]} does not match n={n}")
    _count(spec)
    rdt = np.float32 if spec.dtype == np.complex64 else np.float64
    if n == 1:
        return spec.real.astype(rdt)
    half = n // 2
    spec = spec.copy()
    spec[..., 0] = spec[..., 0].real
    spec[..., half] = spec[..., half].real
    xr = np.conj(spec[..., ::-1])
    even = 0.5 * (spec + xr)
    odd = 0.5 * (spec - xr) * _rfft_twiddles(n, True, spec.dtype.name)
    z = cfft((even + 1j * odd)[..., :half], inverse=True) / half
    out = np.empty(z.shape[:-1] + (n,), dtype=rdt)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out
