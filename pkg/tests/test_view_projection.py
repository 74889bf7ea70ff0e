import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import plane_depth, simple_view
from labelfuse import synthetic
from labelfuse.errors import InvalidInputError
from labelfuse.geometry import DepthMap, pixel_to_world
from labelfuse.instance_match import match_sequence
from labelfuse.raster_io import UNKNOWN, LabeledPointCloud
from labelfuse.semantic_cloud import lift_labels
from labelfuse.view_projection import (
    ProjectionConfig, instance_cloud, project_cloud_to_mask, project_instances_to_masks,
)


def test_empty_cloud_projects_to_unknown():
    view = simple_view()
    out = project_cloud_to_mask(LabeledPointCloud.empty(), view, plane_depth(8, 6, 2))
    assert (out.labels == UNKNOWN).all()


def test_single_point_single_pixel():
    view = simple_view(width=8, height=6, f=100, cx=4, cy=3)
    cloud = LabeledPointCloud([[0.02, -0.02, 2.0]], [7])  # lands on (5, 2)
    out = project_cloud_to_mask(cloud, view, plane_depth(8, 6, 2), splat_radius=0)
    assert np.flatnonzero(out.known).tolist() == [2 * 8 + 5]
    assert out.labels[2, 5] == 7
    out = project_cloud_to_mask(cloud, view, plane_depth(8, 6, 2), splat_radius=1)
    assert out.known.sum() == 9 and out.labels[1:4, 4:7].tolist() == [[7] * 3] * 3
    # the depth gate rejects a point far from the visible surface
    out = project_cloud_to_mask(cloud, view, plane_depth(8, 6, 3), splat_radius=1, depth_gate=0.5)
    assert not out.known.any()


def test_dense_noiseless_cloud_reproduces_gt(orbit_default):
    _, views, depths, sems, _ = orbit_default
    cloud = lift_labels(list(zip(views, depths, sems)), stride=1)
    for view, depth, gt in zip(views, depths, sems):
        out = project_cloud_to_mask(cloud, view, depth, splat_radius=1, depth_gate=0.05)
        covered = out.known
        assert covered.mean() > 0.9
        assert (out.labels[covered] == gt.labels[covered]).mean() >= 0.99


def _brute_force(points, labels, view, depth, radius, gate):
    out = np.full((view.height, view.width), UNKNOWN, dtype=np.int64)
    best = np.full((view.height, view.width), np.inf)
    for p, lab in zip(points, labels):
        cam = view.world_to_cam[:3, :3] @ p + view.world_to_cam[:3, 3]
        if cam[2] <= 0:
            continue
        u = int(np.floor(view.fx * cam[0] / cam[2] + view.cx + 0.5))
        v = int(np.floor(view.fy * cam[1] / cam[2] + view.cy + 0.5))
        for vv in range(v - radius, v + radius + 1):
            for uu in range(u - radius, u + radius + 1):
                if not (0 <= uu < view.width and 0 <= vv < view.height):
                    continue
                if abs(cam[2] - depth.values[vv, uu]) > gate:
                    continue
                if (cam[2], lab) < (best[vv, uu], out[vv, uu]):
                    best[vv, uu], out[vv, uu] = cam[2], lab
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40), st.integers(0, 2))
def test_zbuffer_matches_brute_force(seed, n, radius):
    rng = np.random.default_rng(seed)
    view = simple_view(width=10, height=8, f=6)
    depth = DepthMap(rng.uniform(1.5, 2.5, (8, 10)))
    z = rng.uniform(1.0, 3.0, n)
    uv = rng.uniform(-1, 11, (n, 2))
    pts = np.stack([(uv[:, 0] - view.cx) / view.fx * z, (uv[:, 1] - view.cy) / view.fy * z, z], 1)
    labels = rng.integers(0, 4, n)
    got = project_cloud_to_mask(LabeledPointCloud(pts, labels), view, depth, radius, 0.4)
    assert np.array_equal(got.labels, _brute_force(pts, labels, view, depth, radius, 0.4))
    perm = rng.permutation(n)
    shuffled = project_cloud_to_mask(LabeledPointCloud(pts[perm], labels[perm]), view, depth, radius, 0.4)
    assert np.array_equal(shuffled.labels, got.labels)


def test_points_behind_camera_are_ignored():
    view = simple_view()
    cloud = LabeledPointCloud([[0, 0, -2.0]], [1])
    assert not project_cloud_to_mask(cloud, view, plane_depth(8, 6, 2)).known.any()


def _two_object_scene():
    prims = (synthetic.Primitive("box", (-0.8, 0.2, 0.3), (0.3, 0.25, 0.3), 4, 0, 0.3),
             synthetic.Primitive("box", (0.7, -0.3, 0.35), (0.35, 0.2, 0.35), 6, 1, 1.1))
    spec = synthetic.SceneSpec(primitives=prims, n_views=8, width=120, height=90)
    return spec, synthetic.render_all(spec)


def test_two_objects_get_one_global_id_each():
    spec, (views, depths, sems, insts) = _two_object_scene()
    gs = match_sequence(views, depths, insts, sems, synthetic.THINGS_CLASSES)
    assert len(gs) == 2
    cfg = ProjectionConfig()
    seen = {0: set(), 1: set()}
    all_ids = set()
    for view, depth, sem, inst in zip(views, depths, sems, insts):
        out = project_instances_to_masks(gs, sem, synthetic.THINGS_CLASSES, view, depth, cfg)
        ids = set(np.unique(out.labels[out.known]).tolist())
        all_ids |= ids
        for obj in (0, 1):
            under = out.labels[(inst.labels == obj) & out.known]
            seen[obj] |= set(np.unique(under).tolist())
    assert len(all_ids) == 2
    assert all(len(s) == 1 for s in seen.values()) and seen[0] != seen[1]


def test_instance_masks_respect_things():
    spec, (views, depths, sems, insts) = _two_object_scene()
    gs = match_sequence(views, depths, insts, sems, synthetic.THINGS_CLASSES)
    out = project_instances_to_masks(gs, sems[0], [], views[0], depths[0])
    assert not out.known.any()
    # a stray instance point on the floor never shows up on stuff pixels
    floor = np.argwhere(sems[0].labels == synthetic.FLOOR)[0]
    v, u = floor
    stray = pixel_to_world(views[0], (u, v), float(depths[0].values[v, u]))
    gs.entries[0].points = np.concatenate([gs.entries[0].points, [stray]])
    out = project_instances_to_masks(gs, sems[0], synthetic.THINGS_CLASSES, views[0], depths[0])
    assert out.labels[v, u] == UNKNOWN
    assert (out.labels[~np.isin(sems[0].labels, synthetic.THINGS_CLASSES)] == UNKNOWN).all()


def test_instance_cloud_ids():
    spec, (views, depths, sems, insts) = _two_object_scene()
    gs = match_sequence(views, depths, insts, sems, synthetic.THINGS_CLASSES)
    cloud = instance_cloud(gs)
    assert len(cloud) == sum(len(e.points) for e in gs.entries)
    assert sorted(set(cloud.inst_labels.tolist())) == [0, 1]


def test_projection_config_validation():
    with pytest.raises(InvalidInputError):
        ProjectionConfig(splat_radius=-1)
