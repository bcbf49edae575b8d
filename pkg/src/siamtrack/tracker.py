"""Frame-by-frame tracking loop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import Box7, PointCloud, crop_search_area, points_in_box, resample_indices, to_box_frame
from .head import DetectionFailure, decode_box
from .model import TrackerModel
from .tensor import no_grad
from .training import template_points


class InitializationError(ValueError):
    pass


FLAG_EMPTY_SEARCH = "empty_search"
FLAG_NO_DETECTION = "no_detection"


@dataclass
class TrackerState:
    first_box: Box7
    prev_box: Box7
    first_template: np.ndarray
    template_points: np.ndarray
    model: TrackerModel
    seed: int
    frame_index: int = 0
    timings_ms: dict = field(default_factory=lambda: {"backbone": 0.0, "correlation": 0.0, "head": 0.0})


@dataclass
class FrameResult:
    frame: int
    pred: Box7
    gt: Box7 | None = None
    flags: list[str] = field(default_factory=list)
    ms: dict = field(default_factory=dict)


def init(frame0: PointCloud, gt_box: Box7, model: TrackerModel, seed: int = 0) -> TrackerState:
    templ = template_points(frame0, gt_box)
    if len(templ) == 0:
        raise InitializationError("first-frame ground-truth box contains no points")
    return TrackerState(gt_box, gt_box, templ, templ, model, seed)


def update_template(state: TrackerState, frame: PointCloud, predicted_box: Box7) -> TrackerState:
    """Template = first-frame object points + points inside the current prediction."""
    current = to_box_frame(frame.coords[points_in_box(frame, predicted_box)], predicted_box)
    merged = np.concatenate([state.first_template, current], axis=0)
    return replace(state, template_points=merged)


def step(state: TrackerState, frame: PointCloud) -> tuple[Box7, TrackerState, list[str]]:
    """Localize the target in ``frame``; returns (box, new state, flags)."""
    cfg = state.model.config
    index = state.frame_index + 1
    flags: list[str] = []
    prev = state.prev_box
    crop = crop_search_area(frame, prev, cfg.margin)
    timings = dict(state.timings_ms)
    if len(crop) == 0:
        flags.append(FLAG_EMPTY_SEARCH)
        box = prev
    else:
        rng = np.random.default_rng([state.seed, index])
        search = to_box_frame(crop.coords, prev)
        search = search[resample_indices(len(search), cfg.n_search, rng)]
        templ = state.template_points[resample_indices(len(state.template_points), cfg.n_template, rng)]
        with no_grad():
            res = state.model.forward(templ, search, int(rng.integers(2 ** 31)))
        for k, v in res.timings_ms.items():
            timings[k] = timings.get(k, 0.0) + v
        try:
            box = decode_box(res.output, state.model.grid_spec, prev)
        except DetectionFailure:
            flags.append(FLAG_NO_DETECTION)
            box = prev
    state = replace(state, prev_box=box, frame_index=index, timings_ms=timings)
    return box, update_template(state, frame, box), flags


def track(tracklet, model: TrackerModel, seed: int = 0) -> list[FrameResult]:
    """One pass over a tracklet: initialize from frame-0 GT, never re-initialize."""
    frames = tracklet.frames
    first = frames[0]
    state = init(first.points, first.box, model, seed)
    results = [FrameResult(0, first.box, first.box)]
    for i in range(1, len(frames)):
        before = dict(state.timings_ms)
        box, state, flags = step(state, frames[i].points)
        ms = {k: state.timings_ms[k] - before.get(k, 0.0) for k in state.timings_ms}
        results.append(FrameResult(i, box, frames[i].box, flags, ms))
    return results


# -- result records ----------------------------------------------------------


def result_record(tracklet, r: FrameResult, timing_digits: int | None = 3) -> dict:
    rec = {
        "tracklet": tracklet.identifier,
        "category": tracklet.category,
        "frame": r.frame,
        "pred": [float(v) for v in r.pred.to_array()],
        "gt": None if r.gt is None else [float(v) for v in r.gt.to_array()],
        "flags": list(r.flags),
    }
    if timing_digits is not None:
        rec["ms"] = {k: round(v, timing_digits) for k, v in r.ms.items()}
    return rec


def write_results(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_results(path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"result file not found: {p}")
    out = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            for key in ("tracklet", "frame", "pred"):
                if key not in rec:
                    raise ValueError(f"missing field {key!r}")
            if len(rec["pred"]) != 7 or (rec.get("gt") is not None and len(rec["gt"]) != 7):
                raise ValueError("boxes need 7 values")
        except ValueError as exc:
            raise ValueError(f"{p}:{lineno}: malformed result record: {exc}") from None
        out.append(rec)
    return out
