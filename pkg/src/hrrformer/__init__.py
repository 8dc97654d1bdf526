"""Holographic Reduced Representation attention on a small numpy autodiff core."""

from .attention import (
    AttentionParams,
    hrr_attention,
    hrr_scores,
    multihead_dot_attention,
    multihead_hrr_attention,
)
from .encoder import EncoderConfig, encoder_forward, init_params, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    HrrformerError,
    IngestionError,
    NonFiniteError,
    OutOfMemoryError,
    SingularInverseError,
)
from .hrr import (
    HrrSymbol,
    SplitMix64,
    Superposition,
    bind,
    cosine_similarity,
    exact_inverse,
    identity,
    sample_symbol,
    superpose,
    unbind,
)
from .tensor import Tensor, grad, no_grad

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "hrr_attention", "hrr_scores", "multihead_dot_attention", "multihead_hrr_attention",
    "EncoderConfig", "encoder_forward", "init_params", "load_checkpoint", "save_checkpoint",
    "ConfigError", "ContractError", "DimensionError", "DivergenceError", "HrrformerError", "IngestionError",
    "NonFiniteError", "OutOfMemoryError", "SingularInverseError",
    "HrrSymbol", "SplitMix64", "Superposition", "bind", "cosine_similarity", "exact_inverse", "identity",
    "sample_symbol", "superpose", "unbind",
    "Tensor", "grad", "no_grad",
]
