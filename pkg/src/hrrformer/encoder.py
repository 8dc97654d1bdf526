"""Hrrformer encoder classifier, Adam training step and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .attention import AttentionParams, multihead_hrr_attention
from .errors import ConfigError, DimensionError, DivergenceError, NonFiniteError
from .tensor import (
    Tensor,
    add,
    cross_entropy_with_logits,
    dropout,
    embedding_lookup,
    grad,
    layer_norm,
    matmul,
    mul,
    no_grad,
    reduce_sum,
    relu,
    resolve_dtype,
)

Params = Dict[str, Tensor]

CHECKPOINT_FORMAT = "hrrformer-checkpoint/1"


@dataclass
class EncoderConfig:
    vocab_size: int
    max_len: int
    embed_dim: int
    mlp_dim: int
    heads: int
    layers: int
    classes: int
    positional: str = "learned"
    dropout_rate: float = 0.1
    dtype: str = "f32"

    def __post_init__(self):
        for name in ("vocab_size", "max_len", "embed_dim", "mlp_dim", "heads", "layers", "classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"heads={self.heads} must divide embed_dim={self.embed_dim}")
        if self.positional not in ("learned", "fixed"):
            raise ConfigError(f"positional must be 'learned' or 'fixed', got {self.positional!r}")
        if self.positional == "fixed" and self.embed_dim % 2:
            raise ConfigError("fixed positional encoding needs an even embed_dim")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        resolve_dtype(self.dtype)

    @property
    def np_dtype(self):
        return resolve_dtype(self.dtype)


def fixed_positional_encoding(T: int, H: int, dtype=np.float64) -> Tensor:
    """Interleaved sinusoids: ``[sin, cos]`` pairs with wavelength ``10000^(2i/H)``."""
    if H % 2:
        raise ConfigError(f"fixed positional encoding needs an even width, got {H}")
    pos = np.arange(T)[:, None]
    freq = 10000.0 ** (-np.arange(0, H, 2) / H)
    pe = np.empty((T, H))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return Tensor(pe, dtype=dtype)


def init_params(config: EncoderConfig, seed: int) -> Params:
    """Gaussian weights with variance 1/fan_in; zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    H, M, C = config.embed_dim, config.mlp_dim, config.classes

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))

    arrays = {"embedding": rng.normal(0.0, 1.0, (config.vocab_size, H))}
    if config.positional == "learned":
        arrays["positional"] = rng.normal(0.0, 1.0, (config.max_len, H))
    for layer in range(config.layers):
        p = f"layers.{layer}."
        for name in AttentionParams.NAMES:
            arrays[p + "attn." + name] = dense(H, H)
        arrays[p + "ln1.gain"] = np.ones(H)
        arrays[p + "ln1.bias"] = np.zeros(H)
        arrays[p + "mlp.W1"] = dense(H, M)
        arrays[p + "mlp.b1"] = np.zeros(M)
        arrays[p + "mlp.W2"] = dense(M, H)
        arrays[p + "mlp.b2"] = np.zeros(H)
        arrays[p + "ln2.gain"] = np.ones(H)
        arrays[p + "ln2.bias"] = np.zeros(H)
    arrays["head.W1"] = dense(H, M)
    arrays["head.b1"] = np.zeros(M)
    arrays["head.W2"] = dense(M, C)
    arrays["head.b2"] = np.zeros(C)
    return {k: Tensor(v, dtype=dt, requires_grad=True) for k, v in arrays.items()}


def _check_params(params: Params, config: EncoderConfig) -> None:
    expected = init_shapes(config)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        missing = sorted(set(expected) ^ set(got)) or [k for k in expected if expected[k] != got[k]]
        raise DimensionError(f"parameters do not match the config: {missing[:5]}")


def init_shapes(config: EncoderConfig) -> dict:
    H, M = config.embed_dim, config.mlp_dim
    shapes = {"embedding": (config.vocab_size, H)}
    if config.positional == "learned":
        shapes["positional"] = (config.max_len, H)
    for layer in range(config.layers):
        p = f"layers.{layer}."
        shapes.update({p + "attn." + n: (H, H) for n in AttentionParams.NAMES})
        shapes.update({p + "ln1.gain": (H,), p + "ln1.bias": (H,), p + "mlp.W1": (H, M),
                       p + "mlp.b1": (M,), p + "mlp.W2": (M, H), p + "mlp.b2": (H,),
                       p + "ln2.gain": (H,), p + "ln2.bias": (H,)})
    shapes.update({"head.W1": (H, M), "head.b1": (M,), "head.W2": (M, config.classes),
                   "head.b2": (config.classes,)})
    return shapes


def encoder_forward(tokens, mask, params: Params, config: EncoderConfig, train_mode: bool = False,
                    rng: Optional[np.random.Generator] = None, return_weights: bool = False):
    """Logits (B, C) for integer ``tokens`` (B, T) with a binary ``mask`` (B, T).

    Each block is post-norm: attention + residual + layer norm, then a ReLU
    MLP + residual + layer norm.  Dropout only applies with ``train_mode``
    and an ``rng``.  The encoder output is mean-pooled over valid positions
    and passed through two dense layers.  With ``return_weights`` the
    per-layer attention weights (B, h, T, 1) are returned as well.
    """
    tokens = np.asarray(tokens)
    B, T = tokens.shape
    if T > config.max_len:
        raise DimensionError(f"sequence length {T} exceeds max_len {config.max_len}")
    mask = np.ones((B, T)) if mask is None else np.asarray(mask)
    if mask.shape != (B, T):
        raise DimensionError(f"mask shape {mask.shape} != tokens shape {(B, T)}")
    dt = config.np_dtype
    rate = config.dropout_rate if train_mode else 0.0
    drop_rng = rng if train_mode else None

    x = embedding_lookup(params["embedding"], tokens)
    if config.positional == "learned":
        x = add(x, _rows(params["positional"], T))
    else:
        x = add(x, fixed_positional_encoding(T, config.embed_dim, dt))

    weights = []
    for layer in range(config.layers):
        p = f"layers.{layer}."
        attn = AttentionParams(*(params[p + "attn." + n] for n in AttentionParams.NAMES))
        res = multihead_hrr_attention(x, attn, config.heads, mask, clamp=train_mode)
        weights.append(res.weights)
        x = layer_norm(add(x, dropout(res.out, rate, drop_rng)), params[p + "ln1.gain"], params[p + "ln1.bias"])
        hidden = dropout(relu(add(matmul(x, params[p + "mlp.W1"]), params[p + "mlp.b1"])), rate, drop_rng)
        x = layer_norm(add(x, add(matmul(hidden, params[p + "mlp.W2"]), params[p + "mlp.b2"])),
                       params[p + "ln2.gain"], params[p + "ln2.bias"])

    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    pooled = reduce_sum(mul(x, (mask / counts)[:, :, None].astype(dt)), axis=1)
    hidden = relu(add(matmul(pooled, params["head.W1"]), params["head.b1"]))
    logits = add(matmul(hidden, params["head.W2"]), params["head.b2"])
    return (logits, weights) if return_weights else logits


def _rows(table: Tensor, T: int) -> Tensor:
    if T == table.shape[0]:
        return table
    return embedding_lookup(table, np.arange(T))


def loss_fn(params: Params, batch, config: EncoderConfig, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None) -> tuple:
    """Cross-entropy loss tensor and the logits it was computed from."""
    logits = encoder_forward(batch.tokens, batch.mask, params, config, train_mode, rng)
    return cross_entropy_with_logits(logits, batch.labels), logits


def predict(params: Params, tokens, mask, config: EncoderConfig) -> np.ndarray:
    with no_grad():
        return encoder_forward(tokens, mask, params, config).data.argmax(axis=1)


# -- optimization --------------------------------------------------------------

def lr_schedule(epoch: int, lr_init: float = 1e-3, lr_final: float = 1e-5, decay: float = 0.9) -> float:
    """Per-epoch exponential decay floored at ``lr_final``."""
    return max(lr_final, lr_init * decay ** epoch)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Params) -> AdamState:
    return AdamState(0, {k: np.zeros_like(p.data) for k, p in params.items()},
                     {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_update(params: Params, grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> tuple:
    """One bias-corrected Adam step; returns fresh params and state."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        upd = (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
        new_params[name] = Tensor(p.data - upd, requires_grad=True)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new, b1, b2, state.eps)


def train_step(params: Params, batch, state: AdamState, lr: float, config: EncoderConfig,
               rng: Optional[np.random.Generator] = None) -> tuple:
    """Forward, backward and Adam update on one batch; returns (params, state, loss)."""
    try:
        loss, _ = loss_fn(params, batch, config, train_mode=True, rng=rng)
    except NonFiniteError:
        raise DivergenceError(state.step, float("nan")) from None
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(state.step, value)
    names = list(params)
    grads = {n: g.data for n, g in zip(names, grad(loss, [params[n] for n in names]))}
    new_params, new_state = adam_update(params, grads, state, lr)
    return new_params, new_state, value


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(directory, params: Params, config: EncoderConfig, meta: Optional[dict] = None) -> Path:
    """Write ``manifest.json`` + ``params.bin`` (little-endian raw floats) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, p in params.items():
        raw = p.data.astype(p.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(p.shape), "dtype": p.dtype.newbyteorder("<").str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": CHECKPOINT_FORMAT, "config": asdict(config), "blob": "params.bin",
                "params": entries, "meta": meta or {}}
    (directory / "params.bin").write_bytes(b"".join(chunks))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple:
    """Inverse of :func:`save_checkpoint`: ``(params, config, meta)``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable checkpoint manifest in {directory}: {exc}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unknown checkpoint format {manifest.get('format')!r}")
    blob = (directory / manifest["blob"]).read_bytes()
    params = {}
    for e in manifest["params"]:
        chunk = blob[e["offset"]: e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ConfigError(f"checkpoint blob truncated at parameter {e['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        params[e["name"]] = Tensor(arr.astype(arr.dtype.newbyteorder("="), copy=True), requires_grad=True)
    config = EncoderConfig(**manifest["config"])
    _check_params(params, config)
    return params, config, manifest.get("meta", {})
