import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import plane_depth, simple_view, translated
from labelfuse.errors import InvalidInputError
from labelfuse.geometry import (
    BEHIND_CAMERA, OCCLUDED, OUT_OF_VIEW, CameraView, DepthMap, PixelCoord, intrinsics, look_at,
    pixel_to_world, pixels_to_world, project_points, round_half_up, warp_pixel, warp_pixels,
    world_to_pixel,
)


def test_principal_ray_is_optical_axis():
    view = simple_view(width=5, height=5, f=100, cx=2, cy=2)
    np.testing.assert_allclose(pixel_to_world(view, (2, 2), 3.0), [0, 0, 3])


def test_unit_focal_lift():
    view = simple_view(width=4, height=4, f=1, cx=0, cy=0)
    np.testing.assert_allclose(pixel_to_world(view, (1, 1), 2.0), [2, 2, 2])
    moved = simple_view(width=4, height=4, f=1, cx=0, cy=0, pose=translated([1, 0, 0]))
    np.testing.assert_allclose(pixel_to_world(moved, (1, 1), 2.0), [3, 2, 2])


@pytest.mark.parametrize("depth", [0.0, -1.0, np.nan, np.inf])
def test_lift_rejects_bad_depth(depth):
    with pytest.raises(InvalidInputError):
        pixel_to_world(simple_view(), (1, 1), depth)


def test_world_to_pixel_examples():
    view = simple_view(width=5, height=5, f=100, cx=2, cy=2)
    px, z = world_to_pixel(view, (0, 0, 3))
    assert px == PixelCoord(2.0, 2.0) and z == 3.0
    assert world_to_pixel(view, (0, 0, -1)) is BEHIND_CAMERA
    assert world_to_pixel(view, (0, 0, 0)) is BEHIND_CAMERA


def test_camera_validation():
    K = intrinsics(100, 100, 4, 3)
    with pytest.raises(InvalidInputError):
        CameraView(0, 8, 6, intrinsics(-1, 100, 4, 3), np.eye(4))
    with pytest.raises(InvalidInputError):
        CameraView(0, 8, 6, intrinsics(100, 100, 8, 3), np.eye(4))
    skewed = np.eye(4)
    skewed[0, 1] = 0.1
    with pytest.raises(InvalidInputError):
        CameraView(0, 8, 6, K, skewed)
    mirror = np.diag([-1.0, 1, 1, 1])
    with pytest.raises(InvalidInputError):
        CameraView(0, 8, 6, K, mirror)
    view = CameraView(0, 8, 6, K, look_at((1, 2, 3), (0, 0, 0)))
    np.testing.assert_allclose(view.cam_to_world @ view.world_to_cam, np.eye(4), atol=1e-12)


def test_depth_map_validation():
    with pytest.raises(InvalidInputError):
        DepthMap(np.array([[1.0, -2.0]]))
    with pytest.raises(InvalidInputError):
        DepthMap(np.array([[1.0, np.inf]]))
    assert DepthMap(np.array([[1.0, np.nan]])).valid.tolist() == [[True, False]]


def test_round_half_up():
    assert round_half_up([0.5, 1.5, -0.5, -1.5, 2.49]).tolist() == [1, 2, 0, -1, 2]


def _random_view(rng):
    w, h = 640, 480
    f = rng.uniform(200, 800)
    eye = rng.uniform(-3, 3, 3)
    target = eye + rng.normal(size=3)
    return CameraView(0, w, h, intrinsics(f, f * rng.uniform(0.9, 1.1), rng.uniform(0, w), rng.uniform(0, h)),
                      look_at(eye, target))


def test_round_trip_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        view = _random_view(rng)
        u = rng.uniform(0, view.width, 100)
        v = rng.uniform(0, view.height, 100)
        d = rng.uniform(0.1, 20, 100)
        uv, z = project_points(view, pixels_to_world(view, u, v, d))
        assert np.abs(uv - np.stack([u, v], 1)).max() < 1e-9
        assert np.abs(z - d).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 639.99), st.floats(0, 479.99), st.floats(0.05, 50),
       st.integers(0, 2**32 - 1))
def test_scalar_round_trip(u, v, d, seed):
    view = _random_view(np.random.default_rng(seed))
    (pu, pv), z = world_to_pixel(view, pixel_to_world(view, (u, v), d))
    assert abs(pu - u) < 1e-9 and abs(pv - v) < 1e-9 and abs(z - d) < 1e-9 * max(1, d)


def test_identity_warp_is_exact():
    view = simple_view(width=12, height=9, f=50)
    rng = np.random.default_rng(0)
    vals = rng.uniform(1, 4, (9, 12))
    vals[2, 3] = np.nan
    depth = DepthMap(vals)
    for v in range(9):
        for u in range(12):
            if np.isnan(vals[v, u]):
                continue
            assert warp_pixel(view, depth, (u, v), view, depth) == PixelCoord(u, v)
    src, dst = warp_pixels(view, depth, view, depth)
    assert np.array_equal(src, dst) and len(src) == 12 * 9 - 1


def test_disparity_closed_form():
    # plane z=5, camera moved 0.5 m along +x: disparity = fx * tx / z = 10 px
    src = simple_view(width=64, height=48, f=100, cx=32, cy=24)
    dst = simple_view(width=64, height=48, f=100, cx=32, cy=24, pose=translated([0.5, 0, 0]))
    depth = plane_depth(64, 48, 5)
    for u in range(20, 64, 7):
        assert warp_pixel(src, depth, (u, 10), dst, depth) == PixelCoord(u - 10, 10)
    assert warp_pixel(src, depth, (5, 10), dst, depth) is OUT_OF_VIEW


def test_near_plane_occludes_far_plane():
    # src sees a far plane at z=5; in dst a near plane at z=2 covers every pixel
    src = simple_view(width=64, height=48, f=100, cx=32, cy=24)
    dst = simple_view(width=64, height=48, f=100, cx=32, cy=24, pose=translated([1.0, 0, 0]))
    far = plane_depth(64, 48, 5)
    near = plane_depth(64, 48, 2)
    assert warp_pixel(src, far, (32, 24), dst, near) is OCCLUDED
    assert warp_pixel(src, far, (32, 24), dst, far) == PixelCoord(12, 24)
    assert warp_pixel(src, far, (32, 24), dst, near, occlusion_tol=3.5) == PixelCoord(12, 24)
    src_flat, _ = warp_pixels(src, far, dst, near)
    assert len(src_flat) == 0


def test_synthetic_occlusion(orbit_small):
    # GT depth of every rendered view agrees with its neighbors wherever a warp is visible
    _, views, depths, _, _ = orbit_small
    src_flat, dst_flat = warp_pixels(views[0], depths[0], views[1], depths[1])
    assert len(src_flat) > 0
    hidden = 0
    h, w = depths[0].values.shape
    for flat in range(0, h * w, 7):
        v, u = divmod(flat, w)
        if np.isnan(depths[0].values[v, u]):
            continue
        hit = warp_pixel(views[0], depths[0], (u, v), views[1], depths[1])
        hidden += hit is OCCLUDED
        if isinstance(hit, PixelCoord):
            assert flat in set(src_flat.tolist())
    assert hidden > 0


def test_warp_rejects_invalid_source():
    view = simple_view()
    vals = np.full((6, 8), 2.0)
    vals[1, 1] = np.nan
    depth = DepthMap(vals)
    with pytest.raises(InvalidInputError):
        warp_pixel(view, depth, (1, 1), view, depth)
    with pytest.raises(InvalidInputError):
        warp_pixel(view, depth, (8, 0), view, depth)


@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.floats(-0.3, 0.3)] * 2), st.tuples(*[st.floats(-0.3, 0.3)] * 2))
def test_warp_composition_within_one_pixel(tb, tc):
    # fronto-parallel plane z=6 seen by three translated cameras
    size = (96, 72)
    views = [simple_view(i, *size, f=80, pose=translated([x, y, 0]))
             for i, (x, y) in enumerate([(0, 0), tb, tc])]
    depth = plane_depth(*size, 6)
    for u in range(10, 86, 9):
        for v in range(10, 62, 9):
            ab = warp_pixel(views[0], depth, (u, v), views[1], depth)
            ac = warp_pixel(views[0], depth, (u, v), views[2], depth)
            if not isinstance(ab, PixelCoord) or not isinstance(ac, PixelCoord):
                continue
            abc = warp_pixel(views[1], depth, ab, views[2], depth)
            if isinstance(abc, PixelCoord):
                assert abs(abc.u - ac.u) <= 1 and abs(abc.v - ac.v) <= 1
