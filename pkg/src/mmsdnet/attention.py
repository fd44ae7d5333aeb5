"""Scaled dot-product and multi-head attention, causal masks, sinusoidal positions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

__all__ = [
    "ConfigError",
    "MASK_FILL",
    "AttentionHeads",
    "causal_mask",
    "scaled_dot_attention",
    "multi_head_attention",
    "positional_encoding",
]

# Additive score for disallowed positions; exp() of it underflows to exactly 0.
MASK_FILL = -1e30


class ConfigError(ValueError):
    """Inconsistent dimensions or hyperparameters."""


@dataclass(frozen=True)
class AttentionHeads:
    """Projection weights for ``h`` heads over a ``d_model``-wide stream.

    ``w_q``, ``w_k``, ``w_v`` are ``d_model x d_model``; head ``i`` uses
    columns ``[i*d_k, (i+1)*d_k)``, i.e. its own ``d_model x d_k`` block.
    """

    h: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.h < 1 or d % self.h:
            raise ConfigError(f"d_model={d} is not divisible by h={self.h}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ConfigError(f"{name} has shape {getattr(self, name).shape}, expected {(d, d)}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.d_model // self.h


def causal_mask(n: int) -> np.ndarray:
    """Boolean ``n x n`` mask; entry (i, j) is True iff j <= i."""
    if n < 1:
        raise ValueError(f"causal mask needs n >= 1, got {n}")
    return np.tril(np.ones((n, n), dtype=bool))


def _mask_bias(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"mask shape {mask.shape} does not match scores {shape}")
    if not mask.any(axis=1).all():
        raise ContractError("attention mask has a query row with no allowed key")
    return np.where(mask, 0.0, MASK_FILL)


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V, with disallowed scores pushed to MASK_FILL."""
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise DimensionError(f"attention expects matrices: Q {Q.shape}, K {K.shape}, V {V.shape}")
    if Q.shape[1] != K.shape[1]:
        raise DimensionError(f"query width {Q.shape[1]} != key width {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"{K.shape[0]} keys but {V.shape[0]} values")
    scores = T.scale(T.matmul(Q, T.transpose(K)), 1.0 / math.sqrt(Q.shape[1]))
    if mask is not None:
        scores = T.add(scores, _mask_bias(mask, scores.shape))
    return T.matmul(T.softmax(scores, axis=-1), V)


def split_heads_attention(Q: Tensor, K: Tensor, V: Tensor, h: int, mask=None) -> Tensor:
    """Run attention on ``h`` equal column blocks of Q/K/V and concatenate."""
    d = Q.shape[1]
    if h < 1 or d % h or V.shape[1] % h:
        raise ConfigError(f"width {d} is not divisible by h={h}")
    if h == 1:
        return scaled_dot_attention(Q, K, V, mask)
    dk, dv = d // h, V.shape[1] // h
    heads = [
        scaled_dot_attention(
            T.slice_cols(Q, i * dk, (i + 1) * dk),
            T.slice_cols(K, i * dk, (i + 1) * dk),
            T.slice_cols(V, i * dv, (i + 1) * dv),
            mask,
        )
        for i in range(h)
    ]
    return T.concat(heads, axis=1)


def multi_head_attention(
    x_q: Tensor, x_k: Tensor, x_v: Tensor, params: AttentionHeads, mask: np.ndarray | None = None
) -> Tensor:
    """Concat(head_1, ..., head_h) W^O with head_i = Attn(x_q W_Q^i, x_k W_K^i, x_v W_V^i)."""
    d = params.d_model
    for name, x in (("x_q", x_q), ("x_k", x_k), ("x_v", x_v)):
        if x.ndim != 2 or x.shape[1] != d:
            raise DimensionError(f"{name} has shape {x.shape}, expected (*, {d})")
    q = T.matmul(x_q, params.w_q)
    k = T.matmul(x_k, params.w_k)
    v = T.matmul(x_v, params.w_v)
    return T.matmul(split_heads_attention(q, k, v, params.h, mask), params.w_o)


def positional_encoding(max_pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, wavelength base 10000."""
    if d_model < 2 or d_model % 2:
        raise ConfigError(f"positional encoding needs an even d_model, got {d_model}")
    pos = np.arange(max_pos, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((max_pos, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe
