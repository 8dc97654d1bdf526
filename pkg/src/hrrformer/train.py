"""Run configuration and the epoch loop behind ``hrrformer train``."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .encoder import (
    EncoderConfig,
    adam_init,
    adam_update,
    init_params,
    loss_fn,
    lr_schedule,
    predict,
    save_checkpoint,
)
from .errors import ConfigError, DivergenceError, NonFiniteError
from .tasks import Dataset, batch_iter, gen_keyvalue_recall, gen_majority, load_bytes_dataset
from .tensor import grad, resolve_dtype

log = logging.getLogger(__name__)

TASKS = ("kv_recall", "majority", "bytes")
METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_acc", "lr"]


@dataclass
class RunConfig:
    task: str = "kv_recall"
    # task generation
    n_train: int = 8000
    n_test: int = 1000
    n_pairs: int = 8
    vocab: int = 32
    classes: int = 5
    data_dir: Optional[str] = None
    # encoder
    max_len: int = 64
    embed_dim: int = 64
    mlp_dim: int = 128
    heads: int = 4
    layers: int = 1
    positional: str = "learned"
    dropout_rate: float = 0.1
    dtype: str = "f32"
    # optimization
    epochs: int = 20
    batch_size: int = 32
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    decay: float = 0.9
    seed: int = 0
    target_acc: Optional[float] = None  # stop once test accuracy reaches this
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("n_train", "batch_size", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_test < 0 or self.epochs < 0:
            raise ConfigError("n_test and epochs must be non-negative")
        if not 0 < self.lr_final <= self.lr_init:
            raise ConfigError(f"need 0 < lr_final <= lr_init, got {self.lr_final}, {self.lr_init}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.task == "bytes" and not self.data_dir:
            raise ConfigError("task 'bytes' needs data_dir")
        if self.target_acc is not None and not 0 < self.target_acc <= 1:
            raise ConfigError(f"target_acc must lie in (0, 1], got {self.target_acc}")
        resolve_dtype(self.dtype)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)


def build_datasets(cfg: RunConfig) -> tuple:
    total = cfg.n_train + cfg.n_test
    if cfg.task == "kv_recall":
        data = gen_keyvalue_recall(total, cfg.max_len, cfg.n_pairs, cfg.vocab, cfg.seed)
    elif cfg.task == "majority":
        data = gen_majority(total, cfg.max_len, cfg.classes, cfg.seed)
    else:
        data = load_bytes_dataset(cfg.data_dir, cfg.max_len, cfg.seed)
        if len(data) < total:
            raise ConfigError(f"{cfg.data_dir} holds {len(data)} files, config wants {total}")
        data = data.subset(slice(0, total))
    return data.split(cfg.n_test)


def encoder_config(cfg: RunConfig, data: Dataset) -> EncoderConfig:
    return EncoderConfig(vocab_size=data.vocab_size, max_len=cfg.max_len, embed_dim=cfg.embed_dim,
                         mlp_dim=cfg.mlp_dim, heads=cfg.heads, layers=cfg.layers,
                         classes=data.num_classes, positional=cfg.positional,
                         dropout_rate=cfg.dropout_rate, dtype=cfg.dtype)


def accuracy(params, data: Dataset, config: EncoderConfig, batch_size: int = 256) -> float:
    if len(data) == 0:
        return float("nan")
    hits = 0
    for b in batch_iter(data, batch_size, seed=0, shuffle=False):
        hits += int((predict(params, b.tokens, b.mask, config) == b.labels).sum())
    return hits / len(data)


def _fit_batch(params, batch, state, lr, config, rng):
    try:
        loss, logits = loss_fn(params, batch, config, train_mode=True, rng=rng)
    except NonFiniteError:
        raise DivergenceError(state.step, float("nan")) from None
    names = list(params)
    grads = {n: g.data for n, g in zip(names, grad(loss, [params[n] for n in names]))}
    params, state = adam_update(params, grads, state, lr)
    return params, state, loss.item(), logits.data.argmax(axis=1)


def run_training(cfg: RunConfig) -> dict:
    """Train, writing metrics, checkpoints and the resolved config under ``out_dir``.

    Returns a summary with the final and best test accuracy.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_datasets(cfg)
    config = encoder_config(cfg, train)
    (out / "config.resolved.json").write_text(
        json.dumps({"run": asdict(cfg), "encoder": asdict(config)}, indent=2, sort_keys=True) + "\n")

    params = init_params(config, cfg.seed)
    state = adam_init(params)
    drop_rng = np.random.default_rng([cfg.seed, 1])
    best = -1.0
    test_acc = float("nan")
    epochs_run = 0
    save_checkpoint(out / "checkpoints" / "initial", params, config, {"epoch": 0})

    with open(out / "metrics.csv", "w", newline="") as mf, open(out / "timing.csv", "w", newline="") as tf:
        metrics, timing = csv.writer(mf, lineterminator="\n"), csv.writer(tf, lineterminator="\n")
        metrics.writerow(METRICS_HEADER)
        timing.writerow(["epoch", "seconds"])
        for epoch in range(cfg.epochs):
            start = time.monotonic()
            lr = lr_schedule(epoch, cfg.lr_init, cfg.lr_final, cfg.decay)
            loss_sum, hits = 0.0, 0
            for batch in batch_iter(train, cfg.batch_size, cfg.seed, shuffle=True, epoch=epoch):
                params, state, loss, pred = _fit_batch(params, batch, state, lr, config, drop_rng)
                loss_sum += loss * len(batch.labels)
                hits += int((pred == batch.labels).sum())
            test_acc = accuracy(params, test, config)
            row = [epoch + 1, f"{loss_sum / len(train):.6f}", f"{hits / len(train):.6f}",
                   f"{test_acc:.6f}", f"{lr:.6g}"]
            metrics.writerow(row)
            mf.flush()
            timing.writerow([epoch + 1, f"{time.monotonic() - start:.3f}"])
            tf.flush()
            log.info("epoch %d loss %s train_acc %s test_acc %s lr %s", *row)
            if test_acc > best:
                best = test_acc
                save_checkpoint(out / "checkpoints" / "best", params, config,
                                {"epoch": epoch + 1, "test_acc": round(test_acc, 6)})
            epochs_run = epoch + 1
            if cfg.target_acc is not None and test_acc >= cfg.target_acc:
                log.info("target accuracy %s reached after %d epochs", cfg.target_acc, epochs_run)
                break
    save_checkpoint(out / "checkpoints" / "final", params, config,
                    {"epoch": epochs_run, "test_acc": None if epochs_run == 0 else round(test_acc, 6)})
    return {"final_test_acc": test_acc, "best_test_acc": best if epochs_run else float("nan"),
            "epochs_run": epochs_run, "out_dir": str(out)}
