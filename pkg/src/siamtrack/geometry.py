"""Point clouds, oriented boxes, neighbor search and the spatial plumbing of tracking.

Box convention: ``size = (w, l, h)`` are the extents along the box's local
x, y and z axes; ``yaw`` rotates the local frame about +z. A point is
inside when its local coordinates satisfy ``|x| <= w/2, |y| <= l/2,
|z| <= h/2`` (boundary counts as inside).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_MARGIN = 2.0
CLIP_EPS = 1e-9
# boundary tolerance (meters) so face points survive the world <-> box round trip
BOX_EPS = 1e-9


class ParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class EmptyCloudError(ValueError):
    pass


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(float(theta), 2.0 * math.pi)
    return math.pi if a <= -math.pi else a


@dataclass
class PointCloud:
    coords: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.coords).all():
            raise ValueError("point coordinates must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.ndim == 1:
                self.features = self.features[:, None]
            if len(self.features) != len(self.coords):
                raise ValueError(f"features have {len(self.features)} rows for {len(self.coords)} points")

    def __len__(self) -> int:
        return len(self.coords)

    def select(self, index) -> "PointCloud":
        feats = None if self.features is None else self.features[index]
        return PointCloud(self.coords[index], feats)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True)
class Box7:
    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("Box7 needs 3 center and 3 size components")
        if not all(s > 0 for s in size):
            raise ValueError(f"box sizes must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @classmethod
    def from_array(cls, v) -> "Box7":
        v = [float(x) for x in v]
        return cls(v[0:3], v[3:6], v[6])

    def to_array(self) -> np.ndarray:
        return np.array([*self.center, *self.size, self.yaw])

    @property
    def volume(self) -> float:
        w, l, h = self.size
        return w * l * h

    def footprint(self) -> np.ndarray:
        """Counter-clockwise BEV corners, shape 4x2."""
        w, l, _ = self.size
        local = np.array([[-w / 2, -l / 2], [w / 2, -l / 2], [w / 2, l / 2], [-w / 2, l / 2]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])


@dataclass
class NeighborGraph:
    indices: np.ndarray
    neighbor_coords: np.ndarray | None = None
    neighbor_features: np.ndarray | None = None
    distances: np.ndarray | None = field(default=None, repr=False)


# -- frames ------------------------------------------------------------------


def to_box_frame(coords: np.ndarray, box: Box7) -> np.ndarray:
    """World coordinates -> box-local coordinates."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = np.asarray(coords, dtype=np.float64) - np.array(box.center)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 1]
    out[:, 1] = -s * d[:, 0] + c * d[:, 1]
    out[:, 2] = d[:, 2]
    return out


def from_box_frame(coords: np.ndarray, box: Box7) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = np.asarray(coords, dtype=np.float64)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] - s * d[:, 1] + box.center[0]
    out[:, 1] = s * d[:, 0] + c * d[:, 1] + box.center[1]
    out[:, 2] = d[:, 2] + box.center[2]
    return out


def box_in_frame(box: Box7, ref: Box7) -> Box7:
    """Express ``box`` in the local frame of ``ref``."""
    center = to_box_frame(np.array([box.center]), ref)[0]
    return Box7(center, box.size, box.yaw - ref.yaw)


def apply_motion(prev_box: Box7, dx: float, dy: float, dz: float, dtheta: float) -> Box7:
    """Move a box by a displacement given in its own local frame, then turn it."""
    c, s = math.cos(prev_box.yaw), math.sin(prev_box.yaw)
    x, y, z = prev_box.center
    center = (x + c * dx - s * dy, y + s * dx + c * dy, z + dz)
    return Box7(center, prev_box.size, prev_box.yaw + dtheta)


def motion_between(a: Box7, b: Box7) -> tuple[float, float, float, float]:
    """The (dx, dy, dz, dtheta) with ``apply_motion(a, ...) == b``."""
    local = to_box_frame(np.array([b.center]), a)[0]
    return float(local[0]), float(local[1]), float(local[2]), normalize_angle(b.yaw - a.yaw)


# -- sampling and neighborhoods ---------------------------------------------


def resample_indices(n: int, target: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        raise EmptyCloudError("cannot resample an empty point cloud")
    if n >= target:
        return rng.choice(n, size=target, replace=False)
    # keep every original point once, pad with duplicates
    return np.concatenate([rng.permutation(n), rng.integers(0, n, size=target - n)])


def random_resample(pc: PointCloud, target: int, rng: np.random.Generator) -> PointCloud:
    return pc.select(resample_indices(len(pc), target, rng))


def _check_k(k: int, n: int) -> None:
    if k < 1 or k > n:
        raise ParameterError(f"k={k} is outside [1, {n}]")


def knn_coords(pc: PointCloud | np.ndarray, k: int) -> NeighborGraph:
    """Euclidean k-NN in coordinate space, self included, ties to the lower index."""
    coords = pc.coords if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    _check_k(k, len(coords))
    idx = kernels.knn(coords, coords, k)
    feats = None
    if isinstance(pc, PointCloud) and pc.features is not None:
        feats = pc.features[idx]
    return NeighborGraph(idx, coords[idx], feats)


def knn_features(fmap: np.ndarray, k: int, coords: np.ndarray | None = None) -> NeighborGraph:
    """k-NN maximizing ``exp(-||y_i - y_j||^2)``, i.e. nearest in feature space."""
    fmap = np.asarray(getattr(fmap, "data", fmap))
    _check_k(k, len(fmap))
    idx = kernels.knn(fmap, fmap, k)
    return NeighborGraph(idx, None if coords is None else np.asarray(coords)[idx], fmap[idx])


def feature_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.exp(-np.sum(d * d, axis=-1))


# -- boxes -------------------------------------------------------------------


def points_in_box(pc: PointCloud | np.ndarray, box: Box7) -> np.ndarray:
    coords = pc.coords if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    local = to_box_frame(coords, box)
    half = np.array(box.size) / 2.0 + BOX_EPS
    return np.all(np.abs(local) <= half, axis=1)


def crop_search_area(frame: PointCloud, prev_box: Box7, margin: float = DEFAULT_MARGIN) -> PointCloud:
    """Points inside ``prev_box`` grown by ``margin`` on each side of every axis."""
    if margin < 0:
        raise ParameterError(f"margin must be non-negative, got {margin}")
    grown = Box7(prev_box.center, tuple(s + 2.0 * margin for s in prev_box.size), prev_box.yaw)
    return frame.select(points_in_box(frame, grown))


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray, eps: float = CLIP_EPS) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a counter-clockwise convex polygon."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= -eps:
                if sp < -eps:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= -eps:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def iou3d(a: Box7, b: Box7) -> float:
    """Exact IoU of two yaw-rotated boxes."""
    if np.array_equal(a.to_array(), b.to_array()):
        return 1.0  # clipping a rotated box against itself can lose an ulp
    inter_area = max(polygon_area(clip_convex(a.footprint(), b.footprint())), 0.0)
    za0, za1 = a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2
    zb0, zb1 = b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2
    dz = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def center_distance(a: Box7, b: Box7) -> float:
    return float(np.linalg.norm(np.subtract(a.center, b.center)))
