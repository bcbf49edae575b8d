"""Shared-weight point Transformer encoder/decoder.

Encoder layer l halves the point set by random sampling, aggregates local
geometry with an edge convolution over the coordinate k-NN graph, then runs
self-attention over all sampled points. Decoder layer l upsamples the
coarser features back to layer l's points with cross-attention (fine
features query, coarse features key, coarse features plus positional
embedding value). The layer-0 query is the raw coordinates, projected to
the output width.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionParams, PosEmbedParams, cross_attention, pos_embed, self_attention
from .geometry import ParameterError, knn_coords
from .nn import Linear, Module, glorot
from .tensor import DimensionError, Parameter, Tensor


class EdgeConv(Module):
    """``max_j relu([f_i, f_j - f_i] W + b)`` over the neighbors j of i."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, dtype=np.float64):
        self.weight = Parameter(glorot(rng, 2 * c_in, c_out, dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, features: Tensor, neighbors: np.ndarray) -> Tensor:
        c_in = self.weight.shape[0] // 2
        if features.shape[-1] != c_in:
            raise DimensionError(f"edge conv expects {c_in} input channels, got {features.shape}")
        # [f_i, f_j - f_i] W = f_i (W_top - W_bot) + f_j W_bot
        own = features @ (self.weight[:c_in] - self.weight[c_in:])
        other = features @ self.weight[c_in:]
        edges = T.take_rows(other, neighbors) + own.reshape(len(own), 1, -1) + self.bias
        return T.max_reduce(T.relu(edges), axis=1)


def edge_conv(features: Tensor, neighbors: np.ndarray, params: EdgeConv) -> Tensor:
    if neighbors.shape[0] != features.shape[0]:
        raise DimensionError(f"graph has {neighbors.shape[0]} rows for {features.shape[0]} points")
    return params(features, neighbors)


class EncoderLayer(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, heads: int, norm: bool, dtype):
        self.k = k
        self.edge = EdgeConv(rng, c_in, c_out, dtype=dtype)
        self.pos = PosEmbedParams(rng, c_out, dtype=dtype)
        self.attn = AttentionParams(rng, c_out, heads=heads, norm=norm, dtype=dtype)


class DecoderLayer(Module):
    def __init__(self, rng, c_fine: int, c_coarse: int, c_out: int, heads: int, norm: bool, dtype):
        # maps the encoder width of the fine level to the decoder width when they differ
        self.proj = Linear(rng, c_fine, c_out, dtype=dtype) if c_fine != c_out else None
        self.pos = PosEmbedParams(rng, c_coarse, dtype=dtype)
        self.attn = AttentionParams(rng, c_out, c_key=c_coarse, inner=c_out, heads=heads, norm=norm, dtype=dtype)


@dataclass
class PyramidFeatures:
    coords: list[np.ndarray] = field(default_factory=list)
    sample_index: list[np.ndarray] = field(default_factory=list)
    local: list[Tensor] = field(default_factory=list)
    attended: list[Tensor] = field(default_factory=list)
    interpolated: list[Tensor | None] = field(default_factory=list)

    @property
    def output(self) -> Tensor:
        return self.interpolated[0]


class BackboneParams(Module):
    """Encoder widths ``channels`` (C_1..C_3), decoder back to ``out_channels``."""

    def __init__(self, rng: np.random.Generator, channels=(32, 64, 128), out_channels: int = 32,
                 neighbors=(32, 48, 48), heads: int = 2, norm: bool = True, dtype=np.float64):
        if len(channels) != len(neighbors):
            raise ValueError("channels and neighbors must have one entry per encoder layer")
        self.channels = tuple(channels)
        self.out_channels = out_channels
        widths_in = (3,) + self.channels[:-1]
        self.encoder = [EncoderLayer(rng, ci, co, k, heads, norm, dtype)
                        for ci, co, k in zip(widths_in, self.channels, neighbors)]
        # decoder layer l emits C_l (C_0 = out_channels) from C_{l+1}
        dec_out = (out_channels,) + self.channels[:-1]
        dec_in = self.channels
        fine = (3,) + self.channels[:-1]
        self.decoder = [DecoderLayer(rng, fine[l], dec_in[l], dec_out[l], heads, norm, dtype)
                        for l in range(len(self.channels))]

    @property
    def depth(self) -> int:
        return len(self.encoder)

    @property
    def dtype(self):
        return self.encoder[0].edge.weight.dtype


def encoder_layer(coords: np.ndarray, features: Tensor, layer: EncoderLayer, rng: np.random.Generator):
    """Returns (sampled coords, sample index, local features E_l, attended features F_l)."""
    n = len(coords)
    if n % 2:
        raise ParameterError(f"encoder layer needs an even point count, got {n}")
    idx = np.sort(rng.choice(n, n // 2, replace=False))
    sub = coords[idx]
    if len(sub) < layer.k:
        raise ParameterError(f"{len(sub)} sampled points is fewer than the neighbor size {layer.k}")
    graph = knn_coords(sub, layer.k)
    local = edge_conv(T.take_rows(features, idx), graph.indices, layer.edge)
    pos = pos_embed(sub, layer.pos)
    return sub, idx, local, self_attention(local, pos, layer.attn)


def decoder_layer(fine: Tensor, coarse: Tensor, coarse_coords: np.ndarray, layer: DecoderLayer) -> Tensor:
    query = layer.proj(fine) if layer.proj is not None else fine
    return cross_attention(query, coarse, pos_embed(coarse_coords, layer.pos), layer.attn)


def encode(coords: np.ndarray, params: BackboneParams, seed: int) -> PyramidFeatures:
    """Run one branch. The sampling rng is rebuilt from ``seed`` so identical inputs give identical outputs."""
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    if n % (2 ** params.depth):
        raise ParameterError(f"point count {n} is not divisible by {2 ** params.depth}")
    rng = np.random.default_rng(seed)
    pyr = PyramidFeatures()
    feats = Tensor(coords.astype(params.dtype))
    pyr.coords.append(coords)
    pyr.sample_index.append(np.arange(n))
    pyr.local.append(feats)
    pyr.attended.append(feats)
    for layer in params.encoder:
        sub, idx, local, att = encoder_layer(pyr.coords[-1], pyr.attended[-1], layer, rng)
        pyr.coords.append(sub)
        pyr.sample_index.append(idx)
        pyr.local.append(local)
        pyr.attended.append(att)
    pyr.interpolated = [None] * (params.depth + 1)
    pyr.interpolated[-1] = pyr.attended[-1]
    for l in reversed(range(params.depth)):
        pyr.interpolated[l] = decoder_layer(pyr.attended[l], pyr.interpolated[l + 1],
                                            pyr.coords[l + 1], params.decoder[l])
    return pyr


def extract_features(template: np.ndarray, search: np.ndarray, params: BackboneParams,
                     seed: int) -> tuple[Tensor, Tensor]:
    """Siamese pass: the same weights and sampling seed for both branches."""
    y_t = encode(getattr(template, "coords", template), params, seed).output
    y_s = encode(getattr(search, "coords", search), params, seed).output
    return y_t, y_s
