import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamtrack.data import SynthSpec, generate_synthetic
from siamtrack.geometry import (
    Box7, EmptyCloudError, ParameterError, PointCloud, apply_motion, box_in_frame, center_distance,
    crop_search_area, feature_similarity, from_box_frame, iou3d, knn_coords, knn_features, motion_between,
    normalize_angle, points_in_box, random_resample, resample_indices, to_box_frame,
)

from oracles import _inside, brute_knn, mc_iou


def random_box(rng, near=None):
    center = rng.uniform(-3, 3, size=3) if near is None else np.array(near.center) + rng.uniform(-1.5, 1.5, 3)
    return Box7(center, rng.uniform(0.5, 4.0, size=3), rng.uniform(-math.pi, math.pi))


# -- resampling --------------------------------------------------------------


def test_resample_exhaustive_case(rng):
    pc = PointCloud(rng.normal(size=(4, 3)))
    out = random_resample(pc, 4, rng)
    assert sorted(map(tuple, out.coords)) == sorted(map(tuple, pc.coords))


def test_resample_duplicates_small_cloud(rng):
    pc = PointCloud(np.array([[0.0, 0, 0], [1.0, 2, 3]]))
    out = random_resample(pc, 512, rng)
    assert len(out) == 512
    assert all(any(np.array_equal(p, q) for q in pc.coords) for p in out.coords)


def test_resample_seeds_give_distinct_unique_subsets():
    a = resample_indices(2048, 1024, np.random.default_rng(1))
    b = resample_indices(2048, 1024, np.random.default_rng(2))
    for idx in (a, b):
        s = np.sort(idx)
        assert len(s) == 1024 and np.all(np.diff(s) > 0)
    assert not np.array_equal(np.sort(a), np.sort(b))


def test_resample_deterministic():
    assert np.array_equal(resample_indices(300, 128, np.random.default_rng(5)),
                          resample_indices(300, 128, np.random.default_rng(5)))


def test_resample_empty_raises(rng):
    with pytest.raises(EmptyCloudError):
        random_resample(PointCloud.empty(), 8, rng)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 600), st.integers(0, 2 ** 32 - 1))
def test_resample_indices_in_range(n, target, seed):
    idx = resample_indices(n, target, np.random.default_rng(seed))
    assert len(idx) == target and idx.min() >= 0 and idx.max() < n
    if n >= target:
        assert len(np.unique(idx)) == target
    else:
        assert len(np.unique(idx)) == n


# -- k-NN --------------------------------------------------------------------


def test_knn_single_point():
    g = knn_coords(np.zeros((1, 3)), 1)
    assert g.indices.tolist() == [[0]]


def test_knn_collinear_hand_case():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    assert knn_coords(pts, 2).indices[1].tolist() == [1, 0]


def test_knn_matches_brute_force(rng):
    pts = rng.uniform(size=(200, 3))
    np.testing.assert_array_equal(knn_coords(pts, 16).indices, brute_knn(pts, 16))


def test_knn_self_first_for_distinct_points(rng):
    pts = rng.normal(size=(64, 3))
    assert np.array_equal(knn_coords(pts, 4).indices[:, 0], np.arange(64))


def test_knn_ties_go_to_lower_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [0.0, 1, 0]])
    assert knn_coords(pts, 4).indices[0].tolist() == [0, 1, 2, 3]


def test_knn_k_too_large():
    with pytest.raises(ParameterError):
        knn_coords(np.zeros((3, 3)), 4)
    with pytest.raises(ParameterError):
        knn_features(np.zeros((3, 5)), 4)


def test_knn_graph_carries_neighbor_data(rng):
    pc = PointCloud(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)))
    g = knn_coords(pc, 3)
    np.testing.assert_array_equal(g.neighbor_coords, pc.coords[g.indices])
    np.testing.assert_array_equal(g.neighbor_features, pc.features[g.indices])


def test_knn_features_identical_rows_fall_back_to_index_order():
    f = np.ones((6, 4))
    g = knn_features(f, 6)
    assert np.all(g.indices == np.arange(6))
    np.testing.assert_array_equal(feature_similarity(f[:, None], f[None]), np.ones((6, 6)))


def test_feature_similarity_unit_distance():
    assert feature_similarity(np.zeros(3), np.array([1.0, 0, 0])) == pytest.approx(math.exp(-1), abs=1e-15)
    assert feature_similarity(np.zeros(3), np.array([1.0, 0, 0])) == pytest.approx(0.36788, abs=1e-5)


def test_knn_features_matches_brute_force(rng):
    f = rng.normal(size=(128, 32))
    np.testing.assert_array_equal(knn_features(f, 48).indices, brute_knn(f, 48))


def test_knn_features_maximizes_similarity(rng):
    f = rng.normal(size=(40, 6))
    g = knn_features(f, 5)
    sim = feature_similarity(f[:, None], f[None])
    for i in range(40):
        chosen = sim[i, g.indices[i]]
        rest = np.delete(sim[i], g.indices[i])
        assert chosen.min() >= rest.max()
        assert np.all(np.diff(chosen) <= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 120), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_knn_property_brute_force(n, dim, seed):
    rng = np.random.default_rng(seed)
    # quantized coordinates force many exact ties
    pts = rng.integers(0, 4, size=(n, dim)).astype(np.float64)
    k = min(n, 1 + seed % 16)
    np.testing.assert_array_equal(knn_features(pts, k).indices, brute_knn(pts, k))


# -- boxes -------------------------------------------------------------------


def test_points_in_box_center_and_boundary():
    box = Box7((1.0, 2.0, 0.5), (2.0, 4.0, 1.0), 0.7)
    local = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0 + 1e-6, 0, 0]])
    mask = points_in_box(from_box_frame(local, box), box)
    assert mask[0] and mask[1] and not mask[2]
    # exact boundary in the box's own frame
    assert points_in_box(np.array([[1.0, 0, 0]]), Box7((0, 0, 0), (2.0, 4.0, 1.0), 0.0))[0]


def test_points_in_box_matches_recomputation(rng):
    box = random_box(rng)
    pts = rng.uniform(-6, 6, size=(100_000, 3))
    np.testing.assert_array_equal(points_in_box(pts, box), _inside(pts, box))


def test_iou_identical():
    b = Box7((1, 2, 3), (2, 3, 1), 0.4)
    assert iou3d(b, b) == 1.0
    assert iou3d(b, Box7.from_array(b.to_array())) == 1.0


def test_iou_axis_aligned_third():
    a = Box7((0, 0, 0), (2, 2, 2), 0.0)
    b = Box7((1, 0, 0), (2, 2, 2), 0.0)
    assert iou3d(a, b) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_disjoint():
    assert iou3d(Box7((0, 0, 0), (1, 1, 1)), Box7((5, 0, 0), (1, 1, 1))) == 0.0
    assert iou3d(Box7((0, 0, 0), (1, 1, 1)), Box7((0, 0, 3), (1, 1, 1))) == 0.0


def test_iou_rotated_square_analytic():
    # unit square against itself rotated 45 degrees: the overlap is a regular octagon
    a = Box7((0, 0, 0), (1, 1, 1), 0.0)
    b = Box7((0, 0, 0), (1, 1, 1), math.pi / 4)
    octagon = 2 * (math.sqrt(2) - 1)
    assert iou3d(a, b) == pytest.approx(octagon / (2 - octagon), abs=1e-12)


def test_iou_monte_carlo_spot_checks(rng):
    for _ in range(5):
        a = random_box(rng)
        b = random_box(rng, near=a)
        assert abs(iou3d(a, b) - mc_iou(a, b, 400_000, seed=int(rng.integers(1 << 30)))) < 0.008


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_iou_symmetric_and_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    a = random_box(rng)
    b = random_box(rng, near=a)
    v = iou3d(a, b)
    assert 0.0 <= v <= 1.0
    assert abs(v - iou3d(b, a)) < 1e-12
    shift, turn = rng.uniform(-50, 50, size=3), rng.uniform(-math.pi, math.pi)
    c, s = math.cos(turn), math.sin(turn)

    def move(box):
        x, y, z = box.center
        return Box7((c * x - s * y + shift[0], s * x + c * y + shift[1], z + shift[2]), box.size, box.yaw + turn)

    assert abs(v - iou3d(move(a), move(b))) < 1e-9


def test_center_distance():
    assert center_distance(Box7((0, 0, 0), (1, 1, 1)), Box7((3, 4, 0), (1, 1, 1))) == 5.0


# -- crop and motion ---------------------------------------------------------


def test_crop_far_points_empty(rng):
    frame = PointCloud(rng.uniform(50, 60, size=(100, 3)))
    assert len(crop_search_area(frame, Box7((0, 0, 0), (4, 2, 1.5)), 2.0)) == 0


def test_crop_margin_zero_equals_points_in_box(rng):
    frame = PointCloud(rng.uniform(-4, 4, size=(2000, 3)))
    box = random_box(rng)
    np.testing.assert_array_equal(crop_search_area(frame, box, 0.0).coords, frame.coords[points_in_box(frame, box)])


def test_crop_negative_margin():
    with pytest.raises(ParameterError):
        crop_search_area(PointCloud.empty(), Box7((0, 0, 0), (1, 1, 1)), -0.1)


def test_crop_keeps_object_and_only_nearby_clutter():
    spec = SynthSpec(clutter=0.5, seed=3)
    tr = generate_synthetic(spec, 3)
    for fr in tr.frames:
        pc, box = fr.points, fr.box
        crop = crop_search_area(pc, box, 2.0)
        obj = pc.coords[points_in_box(pc, box)]
        assert len(obj) > 0
        kept = {tuple(p) for p in crop.coords}
        assert all(tuple(p) in kept for p in obj)
        local = to_box_frame(crop.coords, box)
        assert np.all(np.abs(local) <= np.array(box.size) / 2 + 2.0 + 1e-12)


def test_apply_motion_zero_and_full_turn():
    b = Box7((1, 2, 3), (4, 2, 1.5), 0.3)
    assert apply_motion(b, 0, 0, 0, 0) == b
    assert apply_motion(b, 0, 0, 0, 2 * math.pi).yaw == pytest.approx(b.yaw, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_motion_round_trip_and_volume(seed):
    rng = np.random.default_rng(seed)
    a = random_box(rng)
    dx, dy, dz = rng.uniform(-3, 3, size=3)
    dt = rng.uniform(-math.pi, math.pi)
    b = apply_motion(a, dx, dy, dz, dt)
    assert b.volume == a.volume
    back = apply_motion(b, *motion_between(b, a))
    np.testing.assert_allclose(back.center, a.center, atol=1e-12)
    assert abs(normalize_angle(back.yaw - a.yaw)) < 1e-12
    got = motion_between(a, b)
    np.testing.assert_allclose(got[:3], (dx, dy, dz), atol=1e-12)
    assert abs(normalize_angle(got[3] - dt)) < 1e-12


def test_box_frame_round_trip(rng):
    box = random_box(rng)
    pts = rng.normal(size=(50, 3))
    np.testing.assert_allclose(from_box_frame(to_box_frame(pts, box), box), pts, atol=1e-12)
    local = box_in_frame(box, box)
    np.testing.assert_allclose(local.center, 0.0, atol=1e-12)
    assert local.yaw == 0.0


@pytest.mark.parametrize("theta", [math.pi, -math.pi, 3 * math.pi, 0.0, -1e-17, 7.0])
def test_normalize_angle_range(theta):
    a = normalize_angle(theta)
    assert -math.pi < a <= math.pi
    assert math.isclose(math.cos(a), math.cos(theta), abs_tol=1e-12)


def test_box_validation():
    with pytest.raises(ValueError):
        Box7((0, 0, 0), (1, 0, 1))
    assert Box7((0, 0, 0), (1, 1, 1), -math.pi).yaw == math.pi


def test_pointcloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), np.zeros((2, 1)))
