"""Independent reference implementations used as test oracles."""
import math

import numpy as np


def brute_knn(points, k):
    """Exhaustive k-NN: full distance matrix, lexicographic (distance, index) order."""
    points = np.asarray(points, dtype=np.float64)
    diff = points[:, None, :] - points[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    idx = np.arange(len(points))
    return np.stack([np.lexsort((idx, row))[:k] for row in d])


def _inside(pts, box):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = pts - np.array(box.center)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    w, l, h = box.size
    return (np.abs(lx) <= w / 2) & (np.abs(ly) <= l / 2) & (np.abs(d[:, 2]) <= h / 2)


def mc_iou(a, b, samples=1_000_000, seed=0):
    """Monte-Carlo IoU: uniform samples over the joint bounding region."""
    rng = np.random.default_rng(seed)
    lo, hi = [], []
    for box in (a, b):
        r = math.hypot(box.size[0], box.size[1]) / 2
        lo.append([box.center[0] - r, box.center[1] - r, box.center[2] - box.size[2] / 2])
        hi.append([box.center[0] + r, box.center[1] + r, box.center[2] + box.size[2] / 2])
    lo, hi = np.min(lo, axis=0), np.max(hi, axis=0)
    pts = rng.uniform(lo, hi, size=(samples, 3))
    ia, ib = _inside(pts, a), _inside(pts, b)
    inter = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia | ib)
    return inter / union if union else 0.0


def dense_attention(query, key, value, wq, wk, wv, wo, heads):
    """Materializes the normalized kernel weight matrix per head; returns (output, weights)."""
    phi = lambda x: np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    q, k, v = query @ wq, key @ wk, value @ wv
    d = q.shape[1] // heads
    outs, weights = [], []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        qh, kh = phi(q[:, sl]), phi(k[:, sl])
        raw = np.array([[qh[i] @ kh[j] for j in range(len(kh))] for i in range(len(qh))])
        w = raw / raw.sum(axis=1, keepdims=True)
        weights.append(w)
        outs.append(w @ v[:, sl])
    return np.concatenate(outs, axis=1) @ wo, weights


def threshold_integral(values, lo, hi, above, step=1e-4):
    """Midpoint-rule integral of the fraction of values above (or below) each threshold."""
    t = np.arange(lo, hi, step) + step / 2
    values = np.asarray(values)[:, None]
    frac = (values > t).mean(axis=0) if above else (values < t).mean(axis=0)
    return float(frac.sum() * step)


def piecewise_threshold_integral(values, lo, hi, above):
    """Exact integral of the same step curve, summed segment by segment between breakpoints."""
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    edges = np.concatenate([[lo], np.sort(v), [hi]])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            mid = 0.5 * (a + b)
            frac = np.mean(values > mid) if above else np.mean(values < mid)
            total += frac * (b - a)
    return total
