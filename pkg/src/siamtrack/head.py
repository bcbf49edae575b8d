"""Bird's-eye-view center head.

The fusion map is max-scattered onto a BEV grid around the search origin, a
three-layer 3x3 conv trunk runs over it, and 1x1 convolutions predict a
center heatmap (logits), a within-cell xy offset, the z coordinate and the
yaw change encoded as (cos, sin). Everything is in the search frame, i.e.
the previous box's local frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import Box7, apply_motion
from .nn import Module, glorot
from .tensor import Parameter, Tensor


class DetectionFailure(RuntimeError):
    """No occupied BEV cell to decode from."""


@dataclass(frozen=True)
class GridSpec:
    x_extent: float = 5.6
    y_extent: float = 3.6
    cell: float = 0.3

    def __post_init__(self):
        if not (self.x_extent > 0 and self.y_extent > 0 and self.cell > 0):
            raise ValueError(f"grid extents and cell size must be positive: {self}")

    @property
    def height(self) -> int:
        return math.ceil(round(2 * self.y_extent / self.cell, 9))

    @property
    def width(self) -> int:
        return math.ceil(round(2 * self.x_extent / self.cell, 9))

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(flat cell index, in-extent mask) for search-frame xy positions."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        inside = (np.abs(xy[:, 0]) <= self.x_extent) & (np.abs(xy[:, 1]) <= self.y_extent)
        ix = np.floor((xy[:, 0] + self.x_extent) / self.cell).astype(np.int64)
        iy = np.floor((xy[:, 1] + self.y_extent) / self.cell).astype(np.int64)
        ix = np.clip(ix, 0, self.width - 1)
        iy = np.clip(iy, 0, self.height - 1)
        return iy * self.width + ix, inside

    def cell_center(self, flat: int | np.ndarray) -> np.ndarray:
        iy, ix = np.divmod(np.asarray(flat), self.width)
        return np.stack([-self.x_extent + (ix + 0.5) * self.cell,
                         -self.y_extent + (iy + 0.5) * self.cell], axis=-1)


@dataclass
class BEVGrid:
    features: Tensor          # C x H x W
    occupancy: np.ndarray     # H x W bool
    dropped: int
    spec: GridSpec


@dataclass
class DetectionOutput:
    heatmap: Tensor           # H x W logits
    offset: Tensor            # 2 x H x W
    z: Tensor                 # 1 x H x W
    yaw: Tensor               # 2 x H x W (cos, sin)
    occupancy: np.ndarray


def scatter_to_bev(features: Tensor, coords: np.ndarray, spec: GridSpec) -> BEVGrid:
    coords = np.asarray(coords)
    cells, inside = spec.cell_of(coords[:, :2])
    keep = np.nonzero(inside)[0]
    h, w = spec.shape
    src = T.take_rows(features, keep) if len(keep) < len(coords) else features
    flat, occupied = T.scatter_max(src, cells[keep], h * w)
    planes = flat.T.reshape(features.shape[1], h, w)
    return BEVGrid(planes, occupied.reshape(h, w), int(len(coords) - len(keep)), spec)


class HeadParams(Module):
    def __init__(self, rng: np.random.Generator, c_in: int = 32, hidden: int = 32, dtype=np.float64):
        widths = [c_in, hidden, hidden, hidden]
        self.convs = [_Conv(rng, a, b, 3, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.out = _Conv(rng, hidden, 6, 1, dtype)


class _Conv(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, dtype):
        fan = c_in * k * k
        self.kernel = Parameter(glorot(rng, fan, c_out * k * k, shape=(c_out, c_in, k, k), dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias)


def bev_head(grid: BEVGrid, params: HeadParams) -> DetectionOutput:
    x = grid.features
    for conv in params.convs:
        x = T.relu(conv(x))
    out = params.out(x)
    return DetectionOutput(out[0], out[1:3], out[3:4], out[4:6], grid.occupancy)


def decode_local(out: DetectionOutput, spec: GridSpec) -> tuple[float, float, float, float, int]:
    """(dx, dy, dz, dtheta, cell) of the best occupied cell, in the search frame."""
    occ = out.occupancy.reshape(-1)
    if not occ.any():
        raise DetectionFailure("no occupied BEV cell")
    scores = np.where(occ, out.heatmap.data.reshape(-1), -np.inf)
    cell = int(np.argmax(scores))
    iy, ix = divmod(cell, spec.width)
    cx, cy = spec.cell_center(cell)
    dx = cx + float(out.offset.data[0, iy, ix])
    dy = cy + float(out.offset.data[1, iy, ix])
    dz = float(out.z.data[0, iy, ix])
    dtheta = math.atan2(float(out.yaw.data[1, iy, ix]), float(out.yaw.data[0, iy, ix]))
    return dx, dy, dz, dtheta, cell


def decode_box(out: DetectionOutput, spec: GridSpec, prev_box: Box7) -> Box7:
    """Map the best occupied cell's regression back to a world-frame box with the previous size."""
    dx, dy, dz, dtheta, _ = decode_local(out, spec)
    return apply_motion(prev_box, dx, dy, dz, dtheta)
