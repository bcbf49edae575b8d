"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise (or when
``SIAMTRACK_PURE_PYTHON=1``) the numpy fallback takes over. Both backends
expose the same four functions with identical results.
"""
import os
from contextlib import contextmanager
from types import ModuleType

import numpy as np

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    if os.environ.get("SIAMTRACK_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"


def backends() -> dict[str, ModuleType]:
    """All importable backends by name (for benchmarks and parity tests)."""
    found = {"python": _pykernels}
    if _compiled is not None:
        found["cython"] = _compiled
    else:
        try:
            from . import _ckernels
            found["cython"] = _ckernels
        except ImportError:
            pass
    return found


@contextmanager
def use_backend(name: str):
    """Temporarily route every kernel call through backend ``name``."""
    global _impl
    found = backends()
    if name not in found:
        raise ValueError(f"backend {name!r} is not available (have: {', '.join(sorted(found))})")
    saved, _impl = _impl, found[name]
    try:
        yield
    finally:
        _impl = saved


def knn(queries: np.ndarray, refs: np.ndarray, k: int) -> np.ndarray:
    q = np.ascontiguousarray(queries, dtype=np.float64)
    r = np.ascontiguousarray(refs, dtype=np.float64)
    return _impl.knn(q, r, k)


def sq_dists(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(queries, dtype=np.float64)
    r = np.ascontiguousarray(refs, dtype=np.float64)
    return _impl.sq_dists(q, r)


def scatter_add_rows(src: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    index = np.ascontiguousarray(index, dtype=np.int64)
    if src.dtype not in (np.float32, np.float64):
        src = src.astype(np.float64)
    return _impl.scatter_add_rows(np.ascontiguousarray(src), index, n)


def scatter_max(src: np.ndarray, cells: np.ndarray, n_cells: int):
    return _impl.scatter_max(np.ascontiguousarray(src, dtype=np.float64),
                             np.ascontiguousarray(cells, dtype=np.int64), n_cells)
