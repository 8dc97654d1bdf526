"""Fast in-process checks of the algebra, gradients and invariances.

Each check returns ``(passed, detail)``; :func:`run_selftest` prints one
table row per check and reports whether everything passed.  Tolerances
follow the working dtype from ``HRRFORMER_DTYPE``.
"""

from __future__ import annotations

import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import fft, hrr, oracles
from .attention import AttentionParams, hrr_attention, hrr_scores, multihead_hrr_attention
from .encoder import EncoderConfig, encoder_forward, init_params, loss_fn
from .gradcheck import check_gradients, relative_error
from .tasks import TaskBatch
from .tensor import (
    Tensor,
    cross_entropy_with_logits,
    default_dtype,
    embedding_lookup,
    layer_norm,
    matmul,
    mul,
    no_grad,
    reduce_sum,
    rfft_circular_conv,
    softmax,
)

TOLERANCES = {
    np.float64: {"exact": 1e-8, "conv": 1e-10, "grad": 1e-5, "grad_model": 1e-4, "step": 1e-6,
                 "shift": 1e-12, "perm": 1e-9, "pad": 1e-5},
    np.float32: {"exact": 1e-3, "conv": 1e-5, "grad": 5e-2, "grad_model": 5e-2, "step": 1e-2,
                 "shift": 1e-6, "perm": 1e-4, "pad": 1e-4},
}

Check = Callable[[], Tuple[bool, str]]


def _tol():
    dt = default_dtype()
    return dt, TOLERANCES[dt]


def _rand(rng, *shape, grad=False):
    dt, _ = _tol()
    return Tensor(rng.uniform(-1.0, 1.0, shape), dtype=dt, requires_grad=grad)


# -- algebra -------------------------------------------------------------------

def check_conv_matches_direct() -> Tuple[bool, str]:
    dt, tol = _tol()
    rng = np.random.default_rng(1)
    worst = 0.0
    for H in (2 ** p for p in range(11)):
        x, y = rng.uniform(-1, 1, (2, H))
        fast = rfft_circular_conv(Tensor(x, dtype=dt), Tensor(y, dtype=dt)).data
        worst = max(worst, relative_error(fast, oracles.direct_circular_conv(x, y)))
    return worst < tol["conv"], f"max rel err {worst:.2e} over H=1..1024"


def check_inverse_identity() -> Tuple[bool, str]:
    dt, tol = _tol()
    e1 = np.zeros(4)
    e1[1] = 1
    shift_ok = np.allclose(hrr.exact_inverse(Tensor(e1, dtype=dt)).data, [0, 0, 0, 1], atol=tol["exact"])
    y = hrr.sample_symbol(256, hrr.SplitMix64(7), dt)
    ident = hrr.bind(y, hrr.exact_inverse(y)).vec.data
    err = np.abs(ident - hrr.identity(256, dt).vec.data).max()
    return shift_ok and err < tol["exact"], f"e1^-1 == e3: {shift_ok}; |y (*) y^-1 - e0| = {err:.2e}"


def check_unbind_exact() -> Tuple[bool, str]:
    dt, tol = _tol()
    worst = 0.0
    for trial in range(100):
        k = hrr.sample_symbol(256, hrr.SplitMix64(trial, 0), dt)
        v = hrr.sample_symbol(256, hrr.SplitMix64(trial, 1), dt)
        got = hrr.unbind(hrr.bind(k, v), k).vec.data
        worst = max(worst, relative_error(got, v.vec.data))
    return worst < tol["exact"], f"max rel err {worst:.2e} over 100 pairs, H=256"


def check_distributivity() -> Tuple[bool, str]:
    dt, tol = _tol()
    worst = 0.0
    for case in range(20):
        rng = hrr.SplitMix64(case, 99)
        pairs = [(hrr.sample_symbol(64, rng, dt), hrr.sample_symbol(64, rng, dt)) for _ in range(5)]
        q = hrr.sample_symbol(64, rng, dt)
        lhs = hrr.unbind(hrr.superpose(pairs), q).vec.data
        rhs = sum(hrr.unbind(hrr.bind(k, v), q).vec.data for k, v in pairs)
        worst = max(worst, relative_error(lhs, rhs))
    return worst < 100 * tol["conv"], f"max rel err {worst:.2e} over 20 cases"


def check_retrieval() -> Tuple[bool, str]:
    dt, _ = _tol()
    wins = 0
    for trial in range(100):
        rng = hrr.SplitMix64(trial, 3)
        a, b, c, d = (hrr.sample_symbol(512, rng, dt) for _ in range(4))
        got = hrr.unbind(hrr.superpose([(a, b), (c, d)]), a)
        wins += hrr.cosine_similarity(got, b).item() > hrr.cosine_similarity(got, d).item()
    return wins >= 95, f"{wins}/100 trials prefer the bound value"


# -- gradients -----------------------------------------------------------------

def _grad_case(f, inputs, key="grad", **kw) -> Tuple[bool, str]:
    _, tol = _tol()
    err = check_gradients(f, inputs, step=tol["step"], **kw)
    return err < tol[key], f"rel err {err:.2e}"


def check_grad_conv() -> Tuple[bool, str]:
    rng = np.random.default_rng(2)
    x, y, c = _rand(rng, 3, 8, grad=True), _rand(rng, 1, 8, grad=True), _rand(rng, 3, 8)
    return _grad_case(lambda: reduce_sum(mul(rfft_circular_conv(x, y), c)), [x, y])


def check_grad_inverse() -> Tuple[bool, str]:
    rng = np.random.default_rng(3)
    y, c = _rand(rng, 2, 8, grad=True), _rand(rng, 2, 8)
    y.data[:, 0] += 2.0  # keep every frequency bin well away from zero
    return _grad_case(lambda: reduce_sum(mul(hrr.exact_inverse(y), c)), [y])


def check_grad_cosine() -> Tuple[bool, str]:
    rng = np.random.default_rng(4)
    u, v, c = _rand(rng, 4, 8, grad=True), _rand(rng, 4, 8, grad=True), _rand(rng, 4)
    return _grad_case(lambda: reduce_sum(mul(hrr.cosine_similarity(u, v), c)), [u, v])


def check_grad_basic_ops() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    a, b = _rand(rng, 2, 3, 4, grad=True), _rand(rng, 4, 5, grad=True)
    g, s = _rand(rng, 5, grad=True), _rand(rng, 5, grad=True)
    table = _rand(rng, 6, 5, grad=True)
    c = _rand(rng, 2, 3, 5)
    ids = np.array([[0, 5, 2], [5, 1, 0]])

    def f():
        h = layer_norm(matmul(a, b), g, s) + embedding_lookup(table, ids)
        return reduce_sum(mul(softmax(h, axis=-1), c)) + cross_entropy_with_logits(
            reduce_sum(h, axis=1), np.array([1, 4]))

    return _grad_case(f, [a, b, g, s, table])


def check_grad_attention() -> Tuple[bool, str]:
    dt, _ = _tol()
    rng = np.random.default_rng(6)
    x = _rand(rng, 2, 4, 8, grad=True)
    p = AttentionParams.init(8, rng, dt)
    c = _rand(rng, 2, 4, 8)
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]])
    return _grad_case(lambda: reduce_sum(mul(multihead_hrr_attention(x, p, 2, mask).out, c)),
                      [x, *dict(p.items()).values()], key="grad_model")


def check_grad_encoder() -> Tuple[bool, str]:
    dt, _ = _tol()
    cfg = EncoderConfig(vocab_size=11, max_len=8, embed_dim=8, mlp_dim=16, heads=2, layers=1,
                        classes=3, dropout_rate=0.0, dtype="f64" if dt == np.float64 else "f32")
    params = init_params(cfg, 0)
    rng = np.random.default_rng(7)
    batch = TaskBatch(rng.integers(1, 11, (2, 8)), np.ones((2, 8), dtype=np.int8), np.array([0, 2]))
    names = list(params)
    return _grad_case(lambda: loss_fn(params, batch, cfg)[0], [params[n] for n in names],
                      key="grad_model", max_entries=32, rng=rng)


# -- invariances ---------------------------------------------------------------

def check_softmax_shift() -> Tuple[bool, str]:
    dt, tol = _tol()
    rng = np.random.default_rng(8)
    q, k, v = (_rand(rng, 1, 2, 6, 8) for _ in range(3))
    scores = hrr_scores(q, k, v)
    base = softmax(scores, axis=-2).data
    worst = max(np.abs(softmax(scores + c, axis=-2).data - base).max() for c in (-3.0, 0.5, 7.0))
    return worst < tol["shift"], f"max weight change {worst:.2e}"


def check_permutation() -> Tuple[bool, str]:
    dt, tol = _tol()
    rng = np.random.default_rng(9)
    x = _rand(rng, 1, 6, 8)
    p = AttentionParams.init(8, rng, dt)
    perm = rng.permutation(6)
    a = multihead_hrr_attention(x, p, 2)
    b = multihead_hrr_attention(Tensor(x.data[:, perm]), p, 2)
    err = max(np.abs(a.out.data[:, perm] - b.out.data).max(),
              np.abs(a.weights.data[:, :, perm] - b.weights.data).max())
    return err < tol["perm"], f"max deviation {err:.2e}"


def check_padding() -> Tuple[bool, str]:
    dt, tol = _tol()
    cfg = EncoderConfig(vocab_size=9, max_len=16, embed_dim=8, mlp_dim=8, heads=2, layers=2, classes=3,
                        dtype="f64" if dt == np.float64 else "f32")
    params = init_params(cfg, 1)
    rng = np.random.default_rng(10)
    toks = rng.integers(1, 9, (2, 6))
    with no_grad():
        short = encoder_forward(toks, np.ones((2, 6)), params, cfg).data
        padded = np.concatenate([toks, np.zeros((2, 5), dtype=toks.dtype)], axis=1)
        mask = np.concatenate([np.ones((2, 6)), np.zeros((2, 5))], axis=1)
        long = encoder_forward(padded, mask, params, cfg).data
    err = np.abs(short - long).max()
    return err < tol["pad"], f"max logit change {err:.2e}"


def check_fft_counter() -> Tuple[bool, str]:
    dt, _ = _tol()
    rng = np.random.default_rng(11)
    counts = []
    for T in (16, 32):
        q, k, v = (_rand(rng, 1, 2, T, 8) for _ in range(3))
        fft.reset_fft_counter()
        with no_grad():
            hrr_attention(q, k, v)
        counts.append(fft.fft_calls())
    return counts[1] == 2 * counts[0], f"calls at T=16,32: {counts}"


SUITES: Dict[str, List[Tuple[str, Check]]] = {
    "algebra": [
        ("conv == direct convolution", check_conv_matches_direct),
        ("exact inverse identity", check_inverse_identity),
        ("unbind(bind(k,v),k) == v", check_unbind_exact),
        ("binding distributes over sums", check_distributivity),
        ("two-pair retrieval", check_retrieval),
    ],
    "gradient": [
        ("circular convolution", check_grad_conv),
        ("exact inverse", check_grad_inverse),
        ("cosine similarity", check_grad_cosine),
        ("matmul/layer_norm/embedding/softmax/xent", check_grad_basic_ops),
        ("multi-head HRR attention", check_grad_attention),
        ("encoder loss (32 sampled params)", check_grad_encoder),
    ],
    "invariance": [
        ("softmax shift invariance", check_softmax_shift),
        ("permutation equivariance", check_permutation),
        ("padding leaves logits unchanged", check_padding),
        ("FFT calls linear in T", check_fft_counter),
    ],
}


def run_selftest(out=print) -> Dict[str, List[Tuple[str, bool, str]]]:
    """Run every suite, printing a pass/fail table; returns results per suite."""
    results = {}
    out(f"{'suite':<11} {'check':<42} {'result':<6} detail")
    for suite, checks in SUITES.items():
        rows = []
        for name, fn in checks:
            start = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            detail = f"{detail} ({time.perf_counter() - start:.2f}s)"
            rows.append((name, bool(ok), detail))
            out(f"{suite:<11} {name:<42} {'PASS' if ok else 'FAIL':<6} {detail}")
        results[suite] = rows
    return results


def all_passed(results) -> bool:
    return all(ok for rows in results.values() for _, ok, _ in rows)
