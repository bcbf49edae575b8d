"""Loss assembly, optimizers, training-pair generation and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import Config
from .geometry import (Box7, PointCloud, box_in_frame, crop_search_area, points_in_box,
                       resample_indices, to_box_frame)
from .head import DetectionOutput, GridSpec
from .model import TrackerModel

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_SKIPS = 1000


class TrainingError(RuntimeError):
    pass


class OutsideGrid(ValueError):
    """Ground-truth center falls outside the BEV grid; the sample is skipped."""


@dataclass
class LossReport:
    total: T.Tensor
    heatmap: float
    offset: float
    z: float
    yaw: float
    positive_cell: int = -1

    @property
    def value(self) -> float:
        return float(self.total.data)


@dataclass
class LossWeights:
    heatmap: float = 1.0
    offset: float = 1.0
    z: float = 1.0
    yaw: float = 1.0

    @classmethod
    def from_config(cls, c: Config) -> "LossWeights":
        return cls(c.w_heatmap, c.w_offset, c.w_z, c.w_yaw)


def positive_cell(gt_xy, occupancy: np.ndarray, spec: GridSpec) -> int:
    """The GT cell when occupied, otherwise the occupied cell nearest the GT center."""
    cell, inside = spec.cell_of(np.asarray(gt_xy)[None])
    if not inside[0]:
        raise OutsideGrid(f"ground-truth center {tuple(gt_xy)} is outside the grid")
    occ = occupancy.reshape(-1)
    cell = int(cell[0])
    if occ[cell] or not occ.any():
        return cell
    cand = np.nonzero(occ)[0]
    d = np.sum((spec.cell_center(cand) - np.asarray(gt_xy)) ** 2, axis=1)
    return int(cand[np.argmin(d)])


def heatmap_target(cell: int, spec: GridSpec, sigma: float = 1.0) -> np.ndarray:
    h, w = spec.shape
    iy, ix = divmod(cell, w)
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((yy - iy) ** 2 + (xx - ix) ** 2) / (2.0 * sigma ** 2))


def compute_loss(out: DetectionOutput, gt_local: Box7, spec: GridSpec,
                 weights: LossWeights | None = None, alpha: float = 2.0, beta: float = 4.0) -> LossReport:
    """Focal heatmap loss plus L1 regression at the positive cell (all in the search frame)."""
    weights = weights or LossWeights()
    gx, gy, gz = gt_local.center
    pos = positive_cell((gx, gy), out.occupancy, spec)
    target = heatmap_target(pos, spec)
    h, w = spec.shape
    iy, ix = divmod(pos, w)
    pos_mask = np.zeros((h, w))
    pos_mask[iy, ix] = 1.0
    neg_weight = (1.0 - target) ** beta * (1.0 - pos_mask)

    logits = out.heatmap
    p = T.sigmoid(logits)
    # log p = -softplus(-x), log(1 - p) = -softplus(x)
    pos_term = (T.power(1.0 - p, alpha) * T.softplus(-logits) * pos_mask).sum()
    neg_term = (T.power(p, alpha) * T.softplus(logits) * neg_weight).sum()
    hm = pos_term + neg_term

    cxy = spec.cell_center(pos)
    off_t = np.array([gx - cxy[0], gy - cxy[1]])
    off = T.abs(out.offset[:, iy, ix] - off_t).sum()
    zt = T.abs(out.z[0, iy, ix] - gz)
    yaw_t = np.array([math.cos(gt_local.yaw), math.sin(gt_local.yaw)])
    yaw = T.abs(out.yaw[:, iy, ix] - yaw_t).sum()

    total = hm * weights.heatmap + off * weights.offset + zt * weights.z + yaw * weights.yaw
    return LossReport(total, float(hm.data), float(off.data), float(zt.data), float(yaw.data), pos)


# -- optimizers --------------------------------------------------------------


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


# -- training pairs ----------------------------------------------------------


@dataclass
class Sample:
    template: np.ndarray      # N_t x 3, template-local
    search: np.ndarray        # N_s x 3, search-frame (reference box local)
    gt_local: Box7
    reference: Box7
    seed: int


def template_points(first_frame: PointCloud, first_box: Box7,
                    frame: PointCloud | None = None, box: Box7 | None = None) -> np.ndarray:
    """First-frame object points plus (optionally) the points in ``box``, each in its box frame."""
    parts = [to_box_frame(first_frame.coords[points_in_box(first_frame, first_box)], first_box)]
    if frame is not None and box is not None:
        parts.append(to_box_frame(frame.coords[points_in_box(frame, box)], box))
    return np.concatenate(parts, axis=0)


def jitter_box(box: Box7, rng: np.random.Generator, xy: float, yaw_deg: float) -> Box7:
    d = rng.uniform(-xy, xy, size=3)
    dyaw = math.radians(rng.uniform(-yaw_deg, yaw_deg))
    return Box7(np.add(box.center, d), box.size, box.yaw + dyaw)


def make_sample(tracklet, t: int, rng: np.random.Generator, config: Config) -> Sample | None:
    """Training pair for frame ``t`` around a jittered copy of the previous GT box."""
    frames = tracklet.frames
    ref = jitter_box(frames[t - 1].box, rng, config.jitter_xy, config.jitter_yaw_deg)
    crop = crop_search_area(frames[t].points, ref, config.margin)
    templ = template_points(frames[0].points, frames[0].box, frames[t - 1].points, frames[t - 1].box)
    if len(crop) == 0 or len(templ) == 0:
        return None
    search = to_box_frame(crop.coords, ref)
    search = search[resample_indices(len(search), config.n_search, rng)]
    templ = templ[resample_indices(len(templ), config.n_template, rng)]
    gt_local = box_in_frame(frames[t].box, ref)
    return Sample(templ, search, gt_local, ref, int(rng.integers(2 ** 31)))


def sample_loss(model: TrackerModel, s: Sample, weights: LossWeights) -> LossReport:
    res = model.forward(s.template, s.search, s.seed)
    c = model.config
    return compute_loss(res.output, s.gt_local, model.grid_spec, weights, c.focal_alpha, c.focal_beta)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    skipped: int = 0


def train(tracklets: Sequence, model: TrackerModel, steps: int | None = None,
          config: Config | None = None, callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Mini-batch gradient descent on jittered training pairs drawn from ``tracklets``."""
    config = config or model.config
    steps = config.steps if steps is None else steps
    pairs = [(i, t) for i, tr in enumerate(tracklets) for t in range(1, len(tr.frames))
             if tr.frames[t].box is not None and tr.frames[t - 1].box is not None]
    if not pairs:
        raise TrainingError("training set has no usable frame pairs")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr)
    weights = LossWeights.from_config(config)
    result = TrainResult()
    for step in range(steps):
        model.zero_grad()
        total = 0.0
        used = misses = 0
        while used < config.batch_size:
            if misses > MAX_CONSECUTIVE_SKIPS:
                raise TrainingError(f"{misses} consecutive unusable samples at step {step}; "
                                    "check the margin and grid settings against the data")
            i, t = pairs[int(rng.integers(len(pairs)))]
            s = make_sample(tracklets[i], t, rng, config)
            if s is None:
                result.skipped += 1
                misses += 1
                continue
            try:
                rep = sample_loss(model, s, weights)
            except OutsideGrid:
                result.skipped += 1
                misses += 1
                continue
            misses = 0
            if not math.isfinite(rep.value):
                raise TrainingError(
                    f"non-finite loss at step {step}: heatmap={rep.heatmap} offset={rep.offset} "
                    f"z={rep.z} yaw={rep.yaw} (tracklet {i}, frame {t})")
            (rep.total * (1.0 / config.batch_size)).backward()
            total += rep.value
            used += 1
        opt.step()
        result.losses.append(total / config.batch_size)
        if callback is not None:
            callback(step, result.losses[-1])
        if config.log_every and step % config.log_every == 0:
            log.info("step %d loss %.4f", step, result.losses[-1])
    return result
