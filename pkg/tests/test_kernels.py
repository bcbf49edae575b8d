import os
import subprocess
import sys

import numpy as np
import pytest

from siamtrack import kernels

from oracles import brute_knn

BACKENDS = kernels.backends()


def test_compiled_backend_available():
    # the build is optional, but when present it must be the one selected by default
    if "cython" in BACKENDS and not os.environ.get("SIAMTRACK_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"


def test_pure_python_env_forces_fallback():
    env = dict(os.environ, SIAMTRACK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import siamtrack.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("n, dim, k", [(1, 3, 1), (37, 3, 4), (300, 3, 16), (129, 32, 48), (600, 5, 48)])
def test_knn_against_brute_force(name, n, dim, k, rng):
    pts = rng.normal(size=(n, dim))
    np.testing.assert_array_equal(BACKENDS[name].knn(pts, pts, k), brute_knn(pts, k))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_knn_duplicates_follow_index_order(name):
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 0, 0], [0.0, 0, 0]])
    assert BACKENDS[name].knn(pts, pts, 4)[3].tolist() == [0, 2, 3, 1]


def test_backends_bit_identical(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    q, r = rng.normal(size=(200, 7)), rng.normal(size=(150, 7))
    np.testing.assert_array_equal(py.sq_dists(q, r), cy.sq_dists(q, r))
    np.testing.assert_array_equal(py.knn(q, r, 20), cy.knn(q, r, 20))
    src = rng.normal(size=(500, 6))
    idx = rng.integers(0, 40, size=500)
    for dt in (np.float64, np.float32):
        np.testing.assert_array_equal(py.scatter_add_rows(src.astype(dt), idx, 40),
                                      cy.scatter_add_rows(src.astype(dt), idx, 40))
    vp, ap = py.scatter_max(src, idx, 45)
    vc, ac = cy.scatter_max(src, idx, 45)
    np.testing.assert_array_equal(vp, vc)
    np.testing.assert_array_equal(ap, ac)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_sq_dists_values(name, rng):
    q, r = rng.normal(size=(20, 4)), rng.normal(size=(30, 4))
    ref = ((q[:, None, :] - r[None]) ** 2).sum(-1)
    np.testing.assert_allclose(BACKENDS[name].sq_dists(q, r), ref, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_scatter_add_rows(name, rng):
    src = rng.normal(size=(50, 3))
    idx = rng.integers(0, 10, size=50)
    ref = np.zeros((10, 3))
    for i, j in enumerate(idx):
        ref[j] += src[i]
    np.testing.assert_allclose(BACKENDS[name].scatter_add_rows(src, idx, 10), ref, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_scatter_max_ties_and_empty(name):
    src = np.array([[1.0, 2.0], [1.0, 3.0], [0.5, 3.0]])
    vals, arg = BACKENDS[name].scatter_max(src, np.array([0, 0, 0]), 2)
    np.testing.assert_array_equal(vals, [[1.0, 3.0], [0.0, 0.0]])
    np.testing.assert_array_equal(arg, [[0, 1], [-1, -1]])


def test_use_backend_switches_and_restores():
    pts = np.random.default_rng(0).normal(size=(40, 3))
    before = kernels._impl
    for name, mod in kernels.backends().items():
        with kernels.use_backend(name):
            assert kernels._impl is mod
            np.testing.assert_array_equal(kernels.knn(pts, pts, 5), mod.knn(pts, pts, 5))
    assert kernels._impl is before
    with pytest.raises(ValueError, match="not available"):
        with kernels.use_backend("fortran"):
            pass
    assert kernels._impl is before
