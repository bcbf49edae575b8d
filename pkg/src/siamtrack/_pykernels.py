"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation: distances are
accumulated dimension by dimension in float64, so both backends produce
bit-identical neighbor tables.
"""
import numpy as np

_CHUNK = 256


def sq_dists(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, summed sequentially over dimensions."""
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    d = np.zeros((queries.shape[0], refs.shape[0]))
    for c in range(queries.shape[1]):
        diff = queries[:, c, None] - refs[None, :, c]
        d += diff * diff
    return d


def knn(queries: np.ndarray, refs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest refs per query, ordered by (distance, index)."""
    nq = queries.shape[0]
    out = np.empty((nq, k), dtype=np.int64)
    for lo in range(0, nq, _CHUNK):
        d = sq_dists(queries[lo:lo + _CHUNK], refs)
        out[lo:lo + _CHUNK] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def scatter_add_rows(src: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, src.shape[1]), dtype=src.dtype)
    np.add.at(out, index, src)
    return out


def scatter_max(src: np.ndarray, cells: np.ndarray, n_cells: int):
    """Bucketwise max of rows. Returns (values, argmax rows); empty buckets give 0 / -1."""
    m, c = src.shape
    vals = np.full((n_cells, c), -np.inf)
    np.maximum.at(vals, cells, src)
    arg = np.full((n_cells, c), -1, dtype=np.int64)
    if m:
        hit = src == vals[cells]
        rows, cols = np.nonzero(hit)
        cand = np.full((n_cells, c), m, dtype=np.int64)
        np.minimum.at(cand, (cells[rows], cols), rows)
        filled = cand < m
        arg[filled] = cand[filled]
    vals[arg < 0] = 0.0
    return vals, arg
