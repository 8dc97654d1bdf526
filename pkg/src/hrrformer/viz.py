"""Export per-head attention weight vectors as CSV and PGM heatmaps."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .encoder import encoder_forward, load_checkpoint
from .errors import DimensionError
from .tasks import read_jsonl
from .tensor import no_grad


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to 0..255 (all zeros for a constant input)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, grid: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM of a 2-D array, min-max normalized."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D grid, got shape {grid.shape}")
    rows, cols = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(to_gray8(grid).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)


def export_weights(checkpoint, sample_file, out_dir) -> list:
    """Run the first sample through the checkpointed model and dump its weights.

    Writes ``weights_l{layer}_h{head}.csv`` for every (layer, head), plus a
    square ``.pgm`` heatmap when the sequence length is a perfect square.
    Returns the written paths.
    """
    params, config, _ = load_checkpoint(checkpoint)
    data = read_jsonl(sample_file, config.max_len)
    if len(data) == 0:
        raise DimensionError(f"{sample_file} holds no samples")
    with open(sample_file) as fh:
        first = json.loads(next(line for line in fh if line.strip()))
    if len(first["tokens"]) > config.max_len:
        raise DimensionError(f"sample length {len(first['tokens'])} exceeds max_len {config.max_len}")
    with no_grad():
        _, weights = encoder_forward(data.tokens[:1], data.mask[:1], params, config, return_weights=True)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = config.max_len
    side = math.isqrt(T)
    written = []
    for layer, w in enumerate(weights):
        for head in range(w.shape[1]):
            vec = w.data[0, head, :, 0]
            stem = out / f"weights_l{layer}_h{head}"
            with open(stem.with_suffix(".csv"), "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["position", "weight"])
                wr.writerows((t, repr(float(x))) for t, x in enumerate(vec))
            written.append(stem.with_suffix(".csv"))
            if side * side == T:
                write_pgm(stem.with_suffix(".pgm"), vec.reshape(side, side))
                written.append(stem.with_suffix(".pgm"))
    return written
