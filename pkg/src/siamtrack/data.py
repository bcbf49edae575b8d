"""Dataset ingestion, synthetic tracklets and on-disk layouts.

Two directory layouts are understood:

* KITTI tracking: ``velodyne/SSSS/FFFFFF.bin``, ``label_02/SSSS.txt`` and
  ``calib/SSSS.txt`` under one root.
* Tracklet directories (written by ``siamtrack synth``): one directory per
  tracklet holding ``meta.json``, ``boxes.txt`` (``frame x y z w l h yaw``
  per annotated frame) and ``velodyne/FFFFFF.bin``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import Box7, PointCloud, from_box_frame, normalize_angle

KITTI_SPLITS = {
    "train": list(range(0, 17)),
    "val": [17, 18],
    "test": [19, 20],
}


class DataFormatError(ValueError):
    pass


# -- velodyne binaries -------------------------------------------------------


def read_kitti_velodyne(path: str | Path) -> PointCloud:
    """Little-endian float32 (x, y, z, intensity) records; intensity becomes the feature column."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"velodyne file not found: {p}")
    raw = p.read_bytes()
    if len(raw) % 16:
        whole = len(raw) - len(raw) % 16
        raise DataFormatError(f"{p}: truncated record at byte offset {whole} "
                              f"(file length {len(raw)} is not a multiple of 16)")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(arr[:, :3].astype(np.float64), arr[:, 3:4].copy())


def write_kitti_velodyne(path: str | Path, pc: PointCloud) -> None:
    out = np.zeros((len(pc), 4), dtype="<f4")
    out[:, :3] = pc.coords
    if pc.features is not None and pc.features.shape[1] >= 1:
        out[:, 3] = pc.features[:, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(out.tobytes())


# -- tracklets ---------------------------------------------------------------


@dataclass
class Frame:
    """One frame; the point cloud may be loaded lazily from ``path``."""

    box: Box7 | None = None
    cloud: PointCloud | None = None
    path: Path | None = None
    loader: Callable[[Path], PointCloud] | None = field(default=None, repr=False)

    @property
    def points(self) -> PointCloud:
        if self.cloud is None:
            if self.path is None:
                raise DataFormatError("frame has neither points nor a file path")
            return (self.loader or read_kitti_velodyne)(self.path)
        return self.cloud


@dataclass
class Tracklet:
    frames: list[Frame]
    category: str = "Car"
    identifier: str = ""

    def __post_init__(self):
        if not self.frames or self.frames[0].box is None:
            raise DataFormatError(f"tracklet {self.identifier!r}: frame 0 must carry a ground-truth box")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def boxes(self) -> list[Box7 | None]:
        return [f.box for f in self.frames]


# -- synthetic generator -----------------------------------------------------


@dataclass
class SynthSpec:
    size: tuple = (4.0, 1.8, 1.5)
    density: float = 8.0            # object surface points per m^2
    waypoints: Sequence = ((0.0, 0.0, 0.0), (6.0, 0.0, 0.0))
    yaws: Sequence | None = None    # one per waypoint; defaults to 0
    clutter: float = 0.2            # clutter points per m^3 in a 20 x 20 x 4 m block
    dropout: float = 0.0
    seed: int = 0
    category: str = "Car"

    def __post_init__(self):
        if self.density < 0 or self.clutter < 0:
            raise ValueError("densities must be non-negative")
        if len(self.waypoints) < 2:
            raise ValueError("at least two waypoints are required")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.yaws is not None and len(self.yaws) != len(self.waypoints):
            raise ValueError("yaws must have one entry per waypoint")


CLUTTER_EXTENT = (20.0, 20.0, 4.0)


def trajectory_box(spec: SynthSpec, frame: int, frames: int) -> Box7:
    """Waypoints are evenly spaced keyframes; position is linear, yaw follows the shortest arc."""
    pts = np.asarray(spec.waypoints, dtype=np.float64)
    yaws = np.zeros(len(pts)) if spec.yaws is None else np.asarray(spec.yaws, dtype=np.float64)
    s = frame / (frames - 1) * (len(pts) - 1)
    i = min(int(math.floor(s)), len(pts) - 2)
    t = s - i
    pos = (1.0 - t) * pts[i] + t * pts[i + 1]
    yaw = yaws[i] + t * normalize_angle(yaws[i + 1] - yaws[i])
    return Box7(pos, spec.size, yaw)


def face_counts(size, density: float) -> list[int]:
    w, l, h = size
    areas = [l * h, l * h, w * h, w * h, w * l, w * l]
    return [int(round(density * a)) for a in areas]


def sample_box_surface(box: Box7, density: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the six faces (-x, +x, -y, +y, -z, +z) in world coordinates."""
    w, l, h = box.size
    half = np.array([w, l, h]) / 2.0
    out = []
    for face, n in enumerate(face_counts(box.size, density)):
        axis, sign = divmod(face, 2)
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
        u[:, axis] = half[axis] * (1.0 if sign else -1.0)
        out.append(u)
    local = np.concatenate(out, axis=0) if out else np.zeros((0, 3))
    return from_box_frame(local, box)


def generate_synthetic(spec: SynthSpec, frames: int, identifier: str = "") -> Tracklet:
    """Deterministic tracklet: object surface points, uniform clutter, dropout.

    Object points, clutter and dropout draw from separate streams of the
    spec seed; the ground-truth trajectory uses no randomness at all.
    """
    if frames < 2:
        raise ValueError(f"a tracklet needs at least 2 frames, got {frames}")
    obj_ss, clutter_ss, drop_ss = np.random.SeedSequence(spec.seed).spawn(3)
    obj_rng = np.random.default_rng(obj_ss)
    clutter_rng = np.random.default_rng(clutter_ss)
    drop_rng = np.random.default_rng(drop_ss)
    ext = np.array(CLUTTER_EXTENT)
    n_clutter = int(round(spec.clutter * float(np.prod(ext))))
    out = []
    for f in range(frames):
        box = trajectory_box(spec, f, frames)
        obj = sample_box_surface(box, spec.density, obj_rng)
        clutter = np.array(box.center) + clutter_rng.uniform(-0.5, 0.5, size=(n_clutter, 3)) * ext
        pts = np.concatenate([obj, clutter], axis=0)
        if spec.dropout > 0:
            pts = pts[drop_rng.uniform(size=len(pts)) >= spec.dropout]
        out.append(Frame(box=box, cloud=PointCloud(pts, np.zeros((len(pts), 1), dtype=np.float32))))
    return Tracklet(out, spec.category, identifier)


def random_synth_spec(rng: np.random.Generator, seed: int, speed=(0.3, 0.9), turn_deg: float = 20.0,
                      clutter: float = 0.2, dropout: float = 0.1, density: float = 8.0) -> SynthSpec:
    """A gently curving 3-waypoint trajectory with random heading and speed (per frame)."""
    heading = rng.uniform(-math.pi, math.pi)
    start = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-0.5, 0.5)])
    step = rng.uniform(*speed)
    turn = math.radians(rng.uniform(-turn_deg, turn_deg))
    yaws = [heading, heading + turn / 2, heading + turn]
    pts = [start]
    for y in yaws[:-1]:
        # each segment spans half the tracklet; the caller scales by frames
        pts.append(pts[-1] + np.array([math.cos(y), math.sin(y), 0.0]) * step)
    return SynthSpec(waypoints=[tuple(p) for p in pts], yaws=yaws, clutter=clutter,
                     dropout=dropout, density=density, seed=seed)


def synthetic_set(count: int, frames: int = 10, seed: int = 0, **kwargs) -> list[Tracklet]:
    """``count`` random tracklets; per-frame speed is drawn, so segment lengths scale with ``frames``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        spec = random_synth_spec(rng, seed=int(rng.integers(2 ** 31)), **kwargs)
        pts = np.asarray(spec.waypoints)
        seg = (frames - 1) / (len(pts) - 1)
        scaled = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            scaled.append(scaled[-1] + (b - a) * seg)
        spec.waypoints = [tuple(p) for p in scaled]
        out.append(generate_synthetic(spec, frames, identifier=f"synth{seed}_{i:04d}"))
    return out


# -- tracklet directories ----------------------------------------------------


def save_tracklet(tracklet: Tracklet, directory: str | Path) -> Path:
    d = Path(directory)
    (d / "velodyne").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, fr in enumerate(tracklet.frames):
        write_kitti_velodyne(d / "velodyne" / f"{i:06d}.bin", fr.points)
        if fr.box is not None:
            lines.append(" ".join([str(i)] + [repr(float(v)) for v in fr.box.to_array()]))
    (d / "boxes.txt").write_text("\n".join(lines) + "\n")
    meta = {"identifier": tracklet.identifier, "category": tracklet.category, "frames": len(tracklet)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return d


def load_tracklet(directory: str | Path, lazy: bool = False) -> Tracklet:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"tracklet metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    boxes: dict[int, Box7] = {}
    box_path = d / "boxes.txt"
    if not box_path.is_file():
        raise FileNotFoundError(f"box file not found: {box_path}")
    for lineno, line in enumerate(box_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DataFormatError(f"{box_path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            boxes[int(parts[0])] = Box7.from_array([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise DataFormatError(f"{box_path}:{lineno}: {exc}") from None
    frames = []
    for i in range(int(meta["frames"])):
        path = d / "velodyne" / f"{i:06d}.bin"
        cloud = None if lazy else read_kitti_velodyne(path)
        frames.append(Frame(box=boxes.get(i), cloud=cloud, path=path))
    return Tracklet(frames, meta.get("category", "Car"), meta.get("identifier", d.name))


def load_tracklet_dir(root: str | Path, category: str | None = None,
                      workers: int | None = None) -> list[Tracklet]:
    """All tracklet subdirectories of ``root`` (sorted), optionally filtered by category.

    Directories are read on a thread pool (file reads release the GIL);
    the result order does not depend on ``workers``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    if (root / "meta.json").is_file():
        dirs = [root]
    else:
        dirs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file())
    with ThreadPoolExecutor(max_workers=workers) as pool:
        out = list(pool.map(load_tracklet, dirs))
    return [t for t in out if category is None or t.category == category]


# -- KITTI tracking ----------------------------------------------------------


def read_kitti_calib(path: str | Path) -> np.ndarray:
    """4x4 transform from velodyne to rectified camera coordinates."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"calibration file not found: {p}")
    entries = {}
    for line in p.read_text().splitlines():
        if ":" in line:
            key, vals = line.split(":", 1)
        else:
            parts = line.split(None, 1)
            if len(parts) < 2:
                continue
            key, vals = parts
        entries[key.strip()] = np.array([float(v) for v in vals.split()])
    tr = entries.get("Tr_velo_cam", entries.get("Tr_velo_to_cam"))
    rect = entries.get("R_rect", entries.get("R0_rect"))
    if tr is None or rect is None:
        raise DataFormatError(f"{p}: missing Tr_velo_cam or R_rect entry")
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :4] = tr.reshape(3, 4)
    r = np.eye(4)
    r[:3, :3] = rect.reshape(3, 3)
    return r @ velo_to_cam


def kitti_label_to_box(h: float, w: float, l: float, x: float, y: float, z: float, ry: float,
                       velo_to_rect: np.ndarray) -> Box7:
    """KITTI camera-frame label (bottom-center location) -> velodyne-frame Box7.

    The object's length runs along its heading, which is the box-local x
    axis here, so ``size = (l, w, h)``.
    """
    center_cam = np.array([x, y - h / 2.0, z, 1.0])
    center = np.linalg.solve(velo_to_rect, center_cam)[:3]
    return Box7(center, (l, w, h), -ry - math.pi / 2.0)


def load_kitti_tracking(root: str | Path, split: str = "test", category: str = "Car",
                        sequences: Sequence[int] | None = None) -> list[Tracklet]:
    """One tracklet per (sequence, track id) of ``category``; frames load lazily."""
    root = Path(root)
    if sequences is None:
        if split not in KITTI_SPLITS:
            raise ValueError(f"unknown split {split!r}")
        sequences = KITTI_SPLITS[split]
    out = []
    for seq in sequences:
        label_path = root / "label_02" / f"{seq:04d}.txt"
        if not label_path.is_file():
            raise FileNotFoundError(f"label file not found: {label_path}")
        calib = read_kitti_calib(root / "calib" / f"{seq:04d}.txt")
        tracks: dict[int, dict[int, Box7]] = {}
        for lineno, line in enumerate(label_path.read_text().splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 17:
                raise DataFormatError(f"{label_path}:{lineno}: expected >= 17 fields, got {len(parts)}")
            if parts[2] != category:
                continue
            try:
                frame, tid = int(parts[0]), int(parts[1])
                h, w, l, x, y, z, ry = (float(v) for v in parts[10:17])
            except ValueError as exc:
                raise DataFormatError(f"{label_path}:{lineno}: {exc}") from None
            tracks.setdefault(tid, {})[frame] = kitti_label_to_box(h, w, l, x, y, z, ry, calib)
        for tid in sorted(tracks):
            boxes = tracks[tid]
            frames = [Frame(box=boxes[f], path=root / "velodyne" / f"{seq:04d}" / f"{f:06d}.bin")
                      for f in sorted(boxes)]
            out.append(Tracklet(frames, category, f"{seq:04d}_{tid}"))
    return out
