"""Multi-head linear attention with positional embeddings.

One kernel serves as self-attention, cross-attention and local-graph
attention. With the positive feature map ``phi(x) = elu(x) + 1`` applied
after the per-head projection, each head computes::

    out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / phi(q_i)^T (sum_j phi(k_j))

which costs O(N_q + N_k). Leading batch axes are supported, so a stack of
per-point neighborhoods (N x K x C) is attended in one call.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Module, glorot
from .tensor import DimensionError, Parameter, Tensor


class AttentionParams(Module):
    """Projections for ``heads`` heads.

    ``wq`` maps query width -> inner width, ``wk``/``wv`` map key width ->
    inner width, ``wo`` maps inner width back to the query width (so the
    residual can be added). Each head owns a contiguous ``inner/heads``
    slice of the projected columns.
    """

    def __init__(self, rng: np.random.Generator, c_query: int, c_key: int | None = None,
                 inner: int | None = None, heads: int = 2, norm: bool = True, dtype=np.float64):
        c_key = c_query if c_key is None else c_key
        inner = c_query if inner is None else inner
        if inner % heads:
            raise ValueError(f"inner width {inner} is not divisible by {heads} heads")
        self.heads = heads
        self.wq = Parameter(glorot(rng, c_query, inner, dtype=dtype))
        self.wk = Parameter(glorot(rng, c_key, inner, dtype=dtype))
        self.wv = Parameter(glorot(rng, c_key, inner, dtype=dtype))
        self.wo = Parameter(glorot(rng, inner, c_query, dtype=dtype))
        self.norm = LayerNorm(c_query, dtype=dtype) if norm else None

    @property
    def c_query(self) -> int:
        return self.wq.shape[0]

    @property
    def c_key(self) -> int:
        return self.wk.shape[0]


class PosEmbedParams(MLP):
    """Per-point perceptron: 3 coordinates -> hidden (rectifier) -> C features."""

    def __init__(self, rng: np.random.Generator, width: int, dtype=np.float64):
        super().__init__(rng, 3, width, width, dtype=dtype)


def pos_embed(coords, params: PosEmbedParams) -> Tensor:
    coords = coords if isinstance(coords, Tensor) else Tensor(np.asarray(coords, dtype=params.fc1.weight.dtype))
    return params(coords)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, c = x.shape
    x = x.reshape(*lead, n, heads, c // heads)
    return x.swapaxes(-3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    return x.swapaxes(-3, -2).reshape(*lead, n, h * d)


def linear_attention(query: Tensor, key: Tensor, value: Tensor, params: AttentionParams) -> Tensor:
    if key.shape[-2] == 0:
        raise ValueError("linear attention needs at least one key")
    if key.shape[:-1] != value.shape[:-1]:
        raise DimensionError(f"key {key.shape} and value {value.shape} are not row-aligned")
    if query.shape[-1] != params.c_query or key.shape[-1] != params.c_key:
        raise DimensionError(
            f"attention widths: query {query.shape[-1]} / key {key.shape[-1]} vs params "
            f"{params.c_query} / {params.c_key}")
    h = params.heads
    q = T.elu1(_split_heads(query @ params.wq, h))
    k = T.elu1(_split_heads(key @ params.wk, h))
    v = _split_heads(value @ params.wv, h)
    kv = k.swapaxes(-1, -2) @ v
    ksum = k.sum(axis=-2, keepdims=True)
    num = q @ kv
    den = (q * ksum).sum(axis=-1, keepdims=True)
    return _merge_heads(num / den) @ params.wo


def _finish(residual: Tensor, update: Tensor, params: AttentionParams) -> Tensor:
    out = residual + update
    return params.norm(out) if params.norm is not None else out


def self_attention(tokens: Tensor, pos: Tensor, params: AttentionParams) -> Tensor:
    """Query, key and value all carry the positional embedding."""
    if tokens.shape != pos.shape:
        raise DimensionError(f"tokens {tokens.shape} and positions {pos.shape} differ")
    x = tokens + pos
    return _finish(tokens, linear_attention(x, x, x, params), params)


def cross_attention(query_tokens: Tensor, kv_tokens: Tensor, value_pos: Tensor,
                    params: AttentionParams) -> Tensor:
    """Positional embedding is added to the value only."""
    if kv_tokens.shape != value_pos.shape:
        raise DimensionError(f"key tokens {kv_tokens.shape} and value positions {value_pos.shape} differ")
    return _finish(query_tokens, linear_attention(query_tokens, kv_tokens, kv_tokens + value_pos, params), params)


def local_attention(tokens: Tensor, pos: Tensor, neighbors: np.ndarray, params: AttentionParams) -> Tensor:
    """Each point attends over its own neighbor rows.

    Query is ``tokens_i + pos_i``; key and value are
    ``tokens[neighbors[i]] + pos[neighbors[i]]``.
    """
    n, k = neighbors.shape
    c = tokens.shape[-1]
    x = tokens + pos
    g = T.take_rows(x, neighbors)
    out = linear_attention(x.reshape(n, 1, c), g, g, params).reshape(n, c)
    return _finish(tokens, out, params)
