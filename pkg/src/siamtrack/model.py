"""The full network: backbone -> correlation -> BEV head."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .backbone import BackboneParams, extract_features
from .config import Config
from .correlation import CorrelationParams, FusionMap, correlate
from .head import BEVGrid, DetectionOutput, GridSpec, HeadParams, bev_head, scatter_to_bev
from .nn import Module


@dataclass
class ForwardResult:
    output: DetectionOutput
    fusion: FusionMap
    grid: BEVGrid
    timings_ms: dict = field(default_factory=dict)


class TrackerModel(Module):
    def __init__(self, config: Config | None = None, seed: int | None = None):
        self.config = config = config or Config()
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.backbone = BackboneParams(rng, config.channels, config.out_channels, config.neighbors,
                                       config.heads, config.layer_norm, dtype)
        self.correlation = CorrelationParams(rng, config.out_channels, config.iterations, config.knn_k,
                                             config.heads, config.layer_norm, config.ego_aug,
                                             config.fusion, dtype)
        self.head = HeadParams(rng, config.out_channels, config.head_channels, dtype)
        self.assign_names()

    @property
    def grid_spec(self) -> GridSpec:
        c = self.config
        return GridSpec(c.grid_x, c.grid_y, c.grid_cell)

    def named_parameters(self, prefix: str = ""):
        for part in ("backbone", "correlation", "head"):
            yield from getattr(self, part).named_parameters(f"{prefix}{part}.")

    def forward(self, template_coords: np.ndarray, search_coords: np.ndarray, seed: int,
                iterations: int | None = None) -> ForwardResult:
        timings = {}
        t0 = time.perf_counter()
        y_t, y_s = extract_features(template_coords, search_coords, self.backbone, seed)
        t1 = time.perf_counter()
        fusion = correlate(y_s, y_t, search_coords, template_coords, self.correlation, iterations)
        t2 = time.perf_counter()
        grid = scatter_to_bev(fusion.features, fusion.coords, self.grid_spec)
        out = bev_head(grid, self.head)
        t3 = time.perf_counter()
        timings["backbone"] = 1e3 * (t1 - t0)
        timings["correlation"] = 1e3 * (t2 - t1)
        timings["head"] = 1e3 * (t3 - t2)
        return ForwardResult(out, fusion, grid, timings)

    def save(self, path) -> None:
        checkpoint.save(path, self.state_dict())

    @classmethod
    def load(cls, path, config: Config | None = None) -> "TrackerModel":
        model = cls(config)
        model.load_state_dict(checkpoint.load(path))
        return model
