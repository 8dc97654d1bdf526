"""Central finite-difference checks against the tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, grad, no_grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-6,
                   indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place.

    Only the flat ``indices`` are probed when given; other entries stay 0.
    """
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(x.shape)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Worst relative error between tape and finite-difference gradients.

    With ``max_entries``, a random subset of that many flat entries (drawn
    across all inputs) is compared as a single vector instead.
    """
    analytic = [g.data for g in grad(f(), inputs)]
    sizes = [t.size for t in inputs]
    if max_entries is None:
        chosen = [None] * len(inputs)
    elif max_entries >= sum(sizes):
        chosen = [np.arange(n) for n in sizes]
    else:
        rng = rng or np.random.default_rng(0)
        picks = np.sort(rng.choice(sum(sizes), size=max_entries, replace=False))
        bounds = np.cumsum([0] + sizes)
        chosen = [picks[(picks >= lo) & (picks < hi)] - lo for lo, hi in zip(bounds[:-1], bounds[1:])]
    if max_entries is not None:
        # a sparse subset is compared as one vector so tiny entries cannot dominate
        pairs = [(a.reshape(-1)[idx], numerical_grad(f, t, step, idx).reshape(-1)[idx])
                 for t, a, idx in zip(inputs, analytic, chosen) if len(idx)]
        return relative_error(np.concatenate([p[0] for p in pairs]),
                              np.concatenate([p[1] for p in pairs]))
    return max(relative_error(a, numerical_grad(f, t, step)) for t, a in zip(inputs, analytic))
