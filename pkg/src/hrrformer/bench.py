"""Sequence-length scaling sweeps for HRR and dot-product attention."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import astuple, dataclass
from typing import Iterable, Optional

import numpy as np

from . import fft
from .attention import AttentionParams, multihead_dot_attention, multihead_hrr_attention
from .errors import ConfigError, OutOfMemoryError
from .tensor import Tensor, grad, memory, no_grad, reduce_sum, resolve_dtype

MODELS = {"hrr": multihead_hrr_attention, "dot": multihead_dot_attention}
BENCH_HEADER = ["model", "T", "H", "heads", "batch", "status", "wall_seconds", "peak_bytes", "fft_calls"]


@dataclass
class BenchRecord:
    model: str
    T: int
    H: int
    heads: int
    batch: int
    status: str = "ok"
    wall_seconds: Optional[float] = None
    peak_bytes: Optional[int] = None
    fft_calls: Optional[int] = None

    def row(self) -> list:
        return ["" if v is None else (f"{v:.6e}" if isinstance(v, float) else v) for v in astuple(self)]


def preset_batch(T: int) -> int:
    """Batch size that halves each time T doubles: ``max(2**(16 - log2 T), 1)``."""
    return max(2 ** (16 - int(math.log2(T))), 1)


def bench_one(model: str, T: int, H: int, heads: int, batch: int = 1, reps: int = 5,
              backward: bool = False, seed: int = 0, mem_limit: Optional[int] = None,
              time_limit: Optional[float] = None, dtype: str = "f32") -> BenchRecord:
    """Time one (model, T) point: 1 warmup, then the median of ``reps`` runs.

    ``peak_bytes`` is the high-water mark of live tensor bytes allocated
    during one pass, above what was live when the pass started (inputs and
    parameters excluded).  ``fft_calls`` counts 1-D transforms in that pass.
    """
    if model not in MODELS:
        raise ConfigError(f"model must be one of {sorted(MODELS)}, got {model!r}")
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    dt = resolve_dtype(dtype)
    rng = np.random.default_rng(seed)
    params = AttentionParams.init(H, rng, dt)
    x = Tensor(rng.standard_normal((batch, T, H)), dtype=dt, requires_grad=backward)
    layer = MODELS[model]
    record = BenchRecord(model, T, H, heads, batch)

    def run():
        if backward:
            loss = reduce_sum(layer(x, params, heads).out)
            grad(loss, [x, *dict(params.items()).values()])
        else:
            with no_grad():
                layer(x, params, heads)

    try:
        with memory.budget(mem_limit):
            start = time.perf_counter()
            run()
            if time_limit is not None and time.perf_counter() - start > time_limit:
                record.status = "OOT"
                return record
            fft.reset_fft_counter()
            base = memory.live
            memory.reset_peak()
            run()
            record.peak_bytes = memory.peak - base
            record.fft_calls = fft.fft_calls()
            times = []
            for _ in range(reps):
                start = time.perf_counter()
                run()
                times.append(time.perf_counter() - start)
    except (OutOfMemoryError, MemoryError):
        record.status = "OOM"
        return record
    record.wall_seconds = statistics.median(times)
    return record


def powers_of_two(t_min: int, t_max: int) -> list:
    if not (fft.is_power_of_two(t_min) and fft.is_power_of_two(t_max)) or t_min > t_max:
        raise ConfigError(f"t-min/t-max must be powers of two with t-min <= t-max, got {t_min}, {t_max}")
    out, t = [], t_min
    while t <= t_max:
        out.append(t)
        t *= 2
    return out


def sweep(model: str, t_min: int, t_max: int, H: int, heads: int, batch: int = 1, reps: int = 5,
          preset: bool = False, log=None, **kwargs) -> list:
    """Run :func:`bench_one` for every power of two in ``[t_min, t_max]``; OOM rows do not stop it."""
    records = []
    for T in powers_of_two(t_min, t_max):
        rec = bench_one(model, T, H, heads, preset_batch(T) if preset else batch, reps, **kwargs)
        records.append(rec)
        if log:
            log(rec)
    return records


def fit_loglog_slope(records: Iterable[BenchRecord]) -> dict:
    """Least-squares slope of ln(wall_seconds) against ln(T), per model, over ok rows."""
    by_model = {}
    for r in records:
        if r.status == "ok" and r.wall_seconds:
            by_model.setdefault(r.model, []).append((r.T, r.wall_seconds))
    slopes = {}
    for model, pts in by_model.items():
        if len(pts) < 2:
            continue
        lt = np.log([p[0] for p in pts])
        lw = np.log([p[1] for p in pts])
        slopes[model] = float(np.polyfit(lt, lw, 1)[0])
    return slopes


def write_csv(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in records:
            w.writerow(r.row())


def read_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if v == "":
                    kw[k] = None
                elif k in ("T", "H", "heads", "batch", "peak_bytes", "fft_calls"):
                    kw[k] = int(v)
                elif k == "wall_seconds":
                    kw[k] = float(v)
                else:
                    kw[k] = v
            out.append(BenchRecord(**kw))
    return out
