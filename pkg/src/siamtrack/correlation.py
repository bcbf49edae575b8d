"""Iterative coarse-to-fine template/search correlation.

Each iteration first embeds the template into the search features with
cross-attention (search queries, template keys, template values plus the
template positional embedding), then refines the result with attention over
each point's k nearest neighbors in feature space. The refined map replaces
the search features for the next iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, PosEmbedParams, cross_attention, local_attention, pos_embed
from .geometry import ParameterError, knn_features
from .nn import Linear, Module
from .tensor import DimensionError, Tensor


@dataclass
class FusionMap:
    features: Tensor
    coords: np.ndarray
    stage: str = "search"
    iteration: int = 0

    def __len__(self) -> int:
        return self.features.shape[0]


class CorrelationIteration(Module):
    def __init__(self, rng, width: int, heads: int, norm: bool, dtype):
        self.cross = AttentionParams(rng, width, heads=heads, norm=norm, dtype=dtype)
        self.template_pos = PosEmbedParams(rng, width, dtype=dtype)
        self.ego = AttentionParams(rng, width, heads=heads, norm=norm, dtype=dtype)
        self.search_pos = PosEmbedParams(rng, width, dtype=dtype)


class CosineFusion(Module):
    """Similarity-map fusion baseline (ablation only).

    For every search point, ``[cos(y_s_i, y_t_j), y_t_j, p_t_j]`` is lifted
    by a linear layer, max-pooled over the template, concatenated with
    ``y_s_i`` and mixed back to the feature width.
    """

    def __init__(self, rng, width: int, dtype):
        self.lift = Linear(rng, width + 4, width, dtype=dtype)
        self.mix = Linear(rng, 2 * width, width, dtype=dtype)


class CorrelationParams(Module):
    def __init__(self, rng: np.random.Generator, width: int = 32, iterations: int = 2, k: int = 48,
                 heads: int = 2, norm: bool = True, ego: bool = True, fusion: str = "attention",
                 dtype=np.float64):
        if iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {iterations}")
        if k < 1:
            raise ParameterError(f"K must be >= 1, got {k}")
        if fusion not in ("attention", "cosine"):
            raise ValueError(f"unknown fusion mode {fusion!r}")
        self.k = k
        self.ego_enabled = ego
        self.fusion = fusion
        if fusion == "cosine":
            self.cosine = CosineFusion(rng, width, dtype)
            self.iterations = []
        else:
            self.iterations = [CorrelationIteration(rng, width, heads, norm, dtype) for _ in range(iterations)]

    def named_parameters(self, prefix: str = ""):
        for name, p in super().named_parameters(prefix):
            yield name.replace("iterations", "iter", 1), p


def cross_feature_aug(search: FusionMap, y_t: Tensor, template_coords: np.ndarray,
                      it: CorrelationIteration) -> FusionMap:
    if y_t.shape[0] == 0:
        raise ValueError("cross-feature augmentation needs a non-empty template")
    if y_t.shape[1] != search.features.shape[1]:
        raise DimensionError(f"template width {y_t.shape[1]} != search width {search.features.shape[1]}")
    x_t = pos_embed(template_coords, it.template_pos)
    fused = cross_attention(search.features, y_t, x_t, it.cross)
    return FusionMap(fused, search.coords, "coarse", search.iteration)


def ego_feature_aug(fused: FusionMap, it: CorrelationIteration, k: int) -> FusionMap:
    n = len(fused)
    if k > n:
        raise ParameterError(f"K={k} exceeds the {n} search points")
    graph = knn_features(fused.features.data, k)
    x_s = pos_embed(fused.coords, it.search_pos)
    refined = local_attention(fused.features, x_s, graph.indices, it.ego)
    return FusionMap(refined, fused.coords, "refined", fused.iteration + 1)


def cosine_fusion(y_s: Tensor, y_t: Tensor, template_coords: np.ndarray, params: CosineFusion) -> Tensor:
    eps = 1e-8
    ns_ = T.sqrt((y_s * y_s).sum(axis=-1, keepdims=True) + eps)
    nt_ = T.sqrt((y_t * y_t).sum(axis=-1, keepdims=True) + eps)
    cos = (y_s / ns_) @ (y_t / nt_).T
    n_s, n_t = cos.shape
    tc = T.Tensor(np.asarray(template_coords, dtype=y_t.dtype))
    templ = T.concat([y_t, tc], axis=-1)
    # lift([cos, y_t, p_t]) = cos * w_cos + [y_t, p_t] W_rest + b
    w = params.lift.weight
    per_t = templ @ w[1:] + params.lift.bias
    pairs = cos.reshape(n_s, n_t, 1) * w[0:1] + per_t.reshape(1, n_t, -1)
    pooled = T.max_reduce(T.relu(pairs), axis=1)
    return T.relu(params.mix(T.concat([y_s, pooled], axis=-1)))


def correlate(y_s: Tensor, y_t: Tensor, search_coords: np.ndarray, template_coords: np.ndarray,
              params: CorrelationParams, iterations: int | None = None) -> FusionMap:
    search_coords = np.asarray(search_coords, dtype=np.float64)
    if params.fusion == "cosine":
        return FusionMap(cosine_fusion(y_s, y_t, template_coords, params.cosine), search_coords, "refined", 1)
    iterations = len(params.iterations) if iterations is None else iterations
    if not 1 <= iterations <= len(params.iterations):
        raise ParameterError(f"iterations must be in [1, {len(params.iterations)}], got {iterations}")
    fmap = FusionMap(y_s, search_coords)
    for it in params.iterations[:iterations]:
        fmap = cross_feature_aug(fmap, y_t, template_coords, it)
        if params.ego_enabled:
            fmap = ego_feature_aug(fmap, it, params.k)
        else:
            fmap = FusionMap(fmap.features, fmap.coords, "coarse", fmap.iteration + 1)
    return fmap
