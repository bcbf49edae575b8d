"""One-pass-evaluation Success and Precision.

Success is the area under the success plot (fraction of frames with
IoU > t for t in [0, 1]). Since the area under ``t -> 1[iou > t]`` is
exactly ``iou``, the AUC equals the mean IoU; it is computed that way,
without threshold bins. Precision is the area under the precision plot
(fraction of frames with center distance < t for t in [0, 2] m) divided by
2 m, which per frame is ``(2 - min(d, 2)) / 2``. Both are reported in
percent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Box7, center_distance, iou3d

PRECISION_RANGE = 2.0


class MetricError(ValueError):
    pass


def success_metric(ious) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise MetricError("success is undefined for an empty IoU array")
    if np.any(ious < 0) or np.any(ious > 1):
        raise MetricError("IoU values must lie in [0, 1]")
    return float(ious.mean() * 100.0)


def precision_metric(dists, max_dist: float = PRECISION_RANGE) -> float:
    d = np.asarray(dists, dtype=np.float64)
    if d.size == 0:
        raise MetricError("precision is undefined for an empty distance array")
    if np.any(d < 0):
        raise MetricError("center distances must be non-negative")
    return float(np.mean((max_dist - np.minimum(d, max_dist)) / max_dist) * 100.0)


@dataclass
class CategoryResult:
    frames: int
    success: float
    precision: float
    ious: np.ndarray = field(repr=False)
    dists: np.ndarray = field(repr=False)
    flagged: int = 0


@dataclass
class EvalReport:
    categories: dict[str, CategoryResult] = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return sum(c.frames for c in self.categories.values())

    def to_text(self, per_frame: bool = False) -> str:
        lines = []
        for name, c in sorted(self.categories.items()):
            lines.append(json.dumps({"category": name, "frames": c.frames, "success": round(c.success, 4),
                                     "precision": round(c.precision, 4), "flagged": c.flagged}))
            if per_frame:
                for i, (iou, d) in enumerate(zip(c.ious, c.dists)):
                    lines.append(f"{name}\t{i}\t{iou:.6f}\t{d:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs: Sequence[tuple[str, Box7, Box7, bool]]) -> EvalReport:
    """Aggregate (category, predicted, ground truth, flagged) frames."""
    per: dict[str, list] = {}
    for cat, pred, gt, flagged in pairs:
        per.setdefault(cat, []).append((iou3d(pred, gt), center_distance(pred, gt), flagged))
    report = EvalReport()
    for cat, rows in per.items():
        ious = np.array([r[0] for r in rows])
        dists = np.array([r[1] for r in rows])
        report.categories[cat] = CategoryResult(len(rows), success_metric(ious), precision_metric(dists),
                                                ious, dists, sum(r[2] for r in rows))
    return report


def evaluate_records(records: Sequence[dict]) -> EvalReport:
    pairs = [(r.get("category", "Car"), Box7.from_array(r["pred"]), Box7.from_array(r["gt"]), bool(r.get("flags")))
             for r in records if r.get("gt") is not None]
    if not pairs:
        raise MetricError("no frames with ground truth to evaluate")
    return evaluate_pairs(pairs)


def one_pass_eval(tracklets, model=None, seed: int = 0,
                  predictor: Callable | None = None) -> EvalReport:
    """Track each tracklet once from its frame-0 box and score every annotated frame.

    ``predictor(tracklet) -> list[Box7]`` replaces the learned tracker (used
    for oracle / constant baselines).
    """
    from .tracker import track

    pairs = []
    for tr in tracklets:
        if tr.frames[0].box is None:
            raise MetricError(f"tracklet {tr.identifier!r} has no frame-0 box")
        if predictor is not None:
            preds = list(predictor(tr))
            flags = [False] * len(preds)
        else:
            res = track(tr, model, seed)
            preds = [r.pred for r in res]
            flags = [bool(r.flags) for r in res]
        if len(preds) != len(tr.frames):
            raise MetricError(f"tracklet {tr.identifier!r}: {len(preds)} predictions for {len(tr.frames)} frames")
        for fr, p, fl in zip(tr.frames, preds, flags):
            if fr.box is not None:
                pairs.append((tr.category, p, fr.box, fl))
    return evaluate_pairs(pairs)


def oracle_predictor(tracklet) -> list[Box7]:
    return [f.box for f in tracklet.frames]


def constant_predictor(tracklet) -> list[Box7]:
    return [tracklet.frames[0].box] * len(tracklet.frames)
