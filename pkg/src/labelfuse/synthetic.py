"""Procedural rooms of boxes and spheres, ray-cast to exact depth and panoptic masks.

A scene is an axis-aligned room (floor at z=0) holding z-yawed boxes and
spheres.  Cameras follow either an orbit around the room center or a straight
corridor track.  ``inject_noise`` then imitates the failure modes of a 2D
panoptic network: whole segments flipped to a wrong class, per-view instance
renumbering, ragged boundaries, dropped segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .geometry import CameraView, DepthMap, intrinsics, look_at
from .raster_io import INSTANCE, MAX_INSTANCES, NUM_CLASSES, SEMANTIC, UNKNOWN, LabelRaster

CLASS_NAMES = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
    "bookshelf", "picture", "counter", "desk", "curtain", "refrigerator",
    "shower curtain", "toilet", "sink", "bathtub", "otherfurniture", "ceiling",
)
WALL, FLOOR, CEILING = 0, 1, 20
STUFF_CLASSES = (WALL, FLOOR, CEILING)
THINGS_CLASSES = tuple(c for c in range(NUM_CLASSES) if c not in STUFF_CLASSES)


@dataclass(frozen=True)
class Primitive:
    shape: str  # "box" | "sphere"
    center: tuple
    size: tuple  # box: half extents (ex, ey, ez); sphere: (radius,)
    sem_class: int
    instance_id: int
    yaw: float = 0.0

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        if self.shape == "sphere":
            r = self.size[0]
            return c - r, c + r
        ex, ey, ez = self.size
        co, si = abs(math.cos(self.yaw)), abs(math.sin(self.yaw))
        hx, hy = ex * co + ey * si, ex * si + ey * co
        return c - (hx, hy, ez), c + (hx, hy, ez)

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float).reshape(-1, 3) - np.asarray(self.center)
        if self.shape == "sphere":
            return np.linalg.norm(p, axis=1) - self.size[0]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1], p[:, 2]], 1)
        q = np.abs(local) - np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    room_half_extents: tuple = (3.2, 3.2, 1.3)  # room spans [-hx,hx] x [-hy,hy] x [0, 2hz]
    primitives: tuple = ()
    trajectory: str = "orbit"  # "orbit" | "corridor"
    n_views: int = 20
    width: int = 640
    height: int = 480
    fov_deg: float = 70.0
    # orbit
    orbit_radius: float = 2.6
    orbit_arc_deg: float = 360.0
    cam_height: float = 1.6
    target: tuple = (0.0, 0.0, 0.4)
    # corridor: camera slides from start to end looking along look_dir
    corridor_start: tuple = (-5.0, -0.6, 1.5)
    corridor_end: tuple = (5.0, -0.6, 1.5)
    look_dir: tuple = (0.0, 1.0, -0.9)

    def __post_init__(self):
        ids = [p.instance_id for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("primitive instance ids must be unique")
        for p in self.primitives:
            if p.sem_class in STUFF_CLASSES or not 0 <= p.sem_class < NUM_CLASSES:
                raise InvalidInputError(f"primitive class {p.sem_class} is not a things class")
            if not 0 <= p.instance_id < MAX_INSTANCES:
                raise InvalidInputError(f"instance id {p.instance_id} out of range")
        boxes = [p.aabb() for p in self.primitives]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                gap = np.maximum(boxes[j][0] - boxes[i][1], boxes[i][0] - boxes[j][1]).max()
                if gap < 0.01:
                    raise InvalidInputError(f"primitives {i} and {j} are closer than 1 cm")
        if self.trajectory not in ("orbit", "corridor"):
            raise InvalidInputError(f"unknown trajectory {self.trajectory!r}")
        if self.n_views < 1:
            raise InvalidInputError("n_views must be >= 1")
        lo, hi = self.room_bounds()
        for view in cameras(self):
            c = view.center
            if np.any(c <= lo) or np.any(c >= hi):
                raise InvalidInputError(f"camera {view.view_id} is outside the room")
            for p in self.primitives:
                if p.signed_distance(c)[0] <= 0.05:
                    raise InvalidInputError(f"camera {view.view_id} is inside primitive {p.instance_id}")

    def room_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hx, hy, hz = self.room_half_extents
        return np.array([-hx, -hy, 0.0]), np.array([hx, hy, 2 * hz])

    def with_image(self, width: int, height: int) -> "SceneSpec":
        return replace(self, width=width, height=height)


def camera_intrinsics(spec: SceneSpec) -> np.ndarray:
    f = (spec.width / 2) / math.tan(math.radians(spec.fov_deg) / 2)
    return intrinsics(f, f, spec.width / 2, spec.height / 2)


def cameras(spec: SceneSpec) -> list[CameraView]:
    K = camera_intrinsics(spec)
    out = []
    for i in range(spec.n_views):
        if spec.trajectory == "orbit":
            a = math.radians(spec.orbit_arc_deg) * i / spec.n_views
            eye = (spec.orbit_radius * math.cos(a), spec.orbit_radius * math.sin(a), spec.cam_height)
            T = look_at(eye, spec.target)
        else:
            s = i / max(spec.n_views - 1, 1)
            eye = np.asarray(spec.corridor_start) * (1 - s) + np.asarray(spec.corridor_end) * s
            T = look_at(eye, eye + np.asarray(spec.look_dir, dtype=float))
        out.append(CameraView(i, spec.width, spec.height, K, T))
    return out


# ---------------------------------------------------------------- ray casting

def _room_hit(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - o) / d
        t_lo = (lo - o) / d
    t_axis = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf))
    axis = np.argmin(t_axis, axis=1)
    t = t_axis[np.arange(len(d)), axis]
    cls = np.full(len(d), WALL, dtype=np.uint16)
    up = d[np.arange(len(d)), 2] > 0
    cls[(axis == 2) & ~up] = FLOOR
    cls[(axis == 2) & up] = CEILING
    return t, cls


def _box_hit(o, d, prim: Primitive):
    c, s = math.cos(prim.yaw), math.sin(prim.yaw)
    rel = o - np.asarray(prim.center)
    lo_ = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])
    ld = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], 1)
    e = np.asarray(prim.size, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-e - lo_) / ld
        t2 = (e - lo_) / ld
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _sphere_hit(o, d, prim: Primitive):
    oc = o - np.asarray(prim.center)
    a = (d * d).sum(1)
    b = 2.0 * d @ oc
    cc = oc @ oc - prim.size[0] ** 2
    disc = b * b - 4 * a * cc
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def render_gt(spec: SceneSpec, view_index: int, view: Optional[CameraView] = None):
    """Exact depth plus semantic and instance masks for one view.

    Rays are parameterized so that the hit parameter equals camera depth.
    """
    if not 0 <= view_index < spec.n_views:
        raise InvalidInputError(f"view index {view_index} out of range")
    view = view or cameras(spec)[view_index]
    v, u = np.mgrid[0:spec.height, 0:spec.width]
    cam_dirs = np.stack([(u.ravel() - view.cx) / view.fx, (v.ravel() - view.cy) / view.fy,
                         np.ones(u.size)], 1)
    R = view.cam_to_world[:3, :3]
    d = cam_dirs @ R.T
    o = view.cam_to_world[:3, 3]
    lo, hi = spec.room_bounds()
    t, sem = _room_hit(o, d, lo, hi)
    inst = np.full(len(d), UNKNOWN, dtype=np.uint16)
    for prim in spec.primitives:
        tp = _box_hit(o, d, prim) if prim.shape == "box" else _sphere_hit(o, d, prim)
        closer = tp < t
        t = np.where(closer, tp, t)
        sem[closer] = prim.sem_class
        inst[closer] = prim.instance_id
    shape = (spec.height, spec.width)
    # float32, the precision depth files store, so a scene read back from disk is the same scene
    return (DepthMap(t.reshape(shape).astype(np.float32)),
            LabelRaster(sem.reshape(shape), SEMANTIC),
            LabelRaster(inst.reshape(shape), INSTANCE))


def render_all(spec: SceneSpec):
    views = cameras(spec)
    frames = [render_gt(spec, i, views[i]) for i in range(spec.n_views)]
    return views, [f[0] for f in frames], [f[1] for f in frames], [f[2] for f in frames]


# ---------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseSpec:
    seed: int = 0
    flip_prob: float = 0.0
    permute_instances: bool = False
    boundary_jitter_px: int = 0
    dropout_prob: float = 0.0

    def __post_init__(self):
        for name in ("flip_prob", "dropout_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if self.boundary_jitter_px < 0:
            raise InvalidInputError("boundary_jitter_px must be >= 0")


def _segment_keys(sem: np.ndarray, inst: np.ndarray) -> np.ndarray:
    keys = sem.astype(np.int64) * 65536 + inst.astype(np.int64)
    return np.where(sem == UNKNOWN, -1, keys)


def inject_noise(sem: LabelRaster, inst: LabelRaster, spec: NoiseSpec, view_index: int,
                 num_classes: int = NUM_CLASSES, max_instances: int = MAX_INSTANCES):
    """Corrupt a clean panoptic pair the way a per-image network would.

    A segment is one (class, instance) pair of the input.  Every random draw
    comes from a stream keyed by (seed, view, segment) or (seed, view), so the
    result does not depend on processing order.
    """
    keys = _segment_keys(sem.labels, inst.labels)
    seg_keys = np.unique(keys[keys >= 0])

    if spec.boundary_jitter_px > 0 and len(seg_keys) > 1:
        rng = np.random.default_rng([spec.seed, view_index, 0])
        rank_of = rng.permutation(len(seg_keys))
        ranks = np.where(keys >= 0, rank_of[np.searchsorted(seg_keys, np.maximum(keys, 0))], -1)
        for _ in range(spec.boundary_jitter_px):
            ranks = ndimage.maximum_filter(ranks, size=3, mode="nearest")
        key_of_rank = np.empty(len(seg_keys), dtype=np.int64)
        key_of_rank[rank_of] = seg_keys
        keys = np.where(ranks >= 0, key_of_rank[np.maximum(ranks, 0)], -1)

    out_sem = np.where(keys >= 0, keys // 65536, UNKNOWN).astype(np.int64)
    out_inst = np.where(keys >= 0, keys % 65536, UNKNOWN).astype(np.int64)
    for key in seg_keys:
        rng = np.random.default_rng([spec.seed, view_index, 1, int(key)])
        flip_u, new_off, drop_u = rng.random(), rng.integers(1, num_classes), rng.random()
        here = keys == key
        if drop_u < spec.dropout_prob:
            out_sem[here] = UNKNOWN
            out_inst[here] = UNKNOWN
        elif flip_u < spec.flip_prob:
            out_sem[here] = (key // 65536 + new_off) % num_classes

    if spec.permute_instances:
        present = np.unique(out_inst[out_inst != UNKNOWN])
        rng = np.random.default_rng([spec.seed, view_index, 2])
        targets = rng.choice(max_instances, size=len(present), replace=False)
        known = out_inst != UNKNOWN
        out_inst[known] = targets[np.searchsorted(present, out_inst[known])]

    return (LabelRaster(out_sem.astype(np.uint16), SEMANTIC),
            LabelRaster(out_inst.astype(np.uint16), INSTANCE))


# ---------------------------------------------------------------- scene factories

def _place_objects(rng, n_objects, radius, gap, size_range, height_range, sphere_every=0):
    prims: list[Primitive] = []
    tries = 0
    while len(prims) < n_objects:
        tries += 1
        if tries > 20000:
            raise InvalidInputError("could not place objects without overlap")
        if tries % 200 == 0:
            prims = []  # dead end: start the layout over
        idx = len(prims)
        cls = int(THINGS_CLASSES[rng.integers(len(THINGS_CLASSES))])
        r = radius * math.sqrt(rng.random())
        a = rng.random() * 2 * math.pi
        x, y = r * math.cos(a), r * math.sin(a)
        if sphere_every and idx % sphere_every == sphere_every - 1:
            rad = float(rng.uniform(*size_range))
            cand = Primitive("sphere", (x, y, rad + 0.02), (rad,), cls, idx)
        else:
            ex, ey = (float(v) for v in rng.uniform(*size_range, size=2))
            ez = float(rng.uniform(*height_range))
            cand = Primitive("box", (x, y, ez), (ex, ey, ez), cls, idx, float(rng.uniform(0, math.pi)))
        lo, hi = cand.aabb()
        ok = all(np.maximum(p.aabb()[0] - hi, lo - p.aabb()[1]).max() >= gap for p in prims)
        if ok:
            prims.append(cand)
    return tuple(prims)


def orbit_scene(seed: int = 0, n_views: int = 20, width: int = 160, height: int = 120,
                n_objects: int = 4, spread: float = 1.2, object_size=(0.4, 0.6),
                object_height=(0.3, 0.6), **kw) -> SceneSpec:
    """Objects scattered within ``spread`` of the room center, seen by an orbiting camera."""
    rng = np.random.default_rng([seed, 7])
    prims = _place_objects(rng, n_objects, radius=spread, gap=0.3, size_range=object_size,
                           height_range=object_height, sphere_every=4)
    return SceneSpec(seed=seed, primitives=prims, trajectory="orbit", n_views=n_views,
                     width=width, height=height, **kw)


def corridor_scene(seed: int = 0, n_views: int = 13, width: int = 160, height: int = 120,
                   n_objects: int = 3, **kw) -> SceneSpec:
    """Long objects along one wall of a corridor, passed by a sideways-looking camera.

    The narrow field of view keeps every view to a fraction of each object.
    """
    rng = np.random.default_rng([seed, 11])
    length, gap = 3.0, 1.0
    total = n_objects * length + (n_objects - 1) * gap
    prims = []
    x = -total / 2
    for i in range(n_objects):
        cls = int(THINGS_CLASSES[rng.integers(len(THINGS_CLASSES))])
        ez = float(rng.uniform(0.35, 0.45))
        prims.append(Primitive("box", (x + length / 2, 0.8, ez), (length / 2, 0.3, ez), cls, i))
        x += length + gap
    half = total / 2 + 1.0
    kw.setdefault("fov_deg", 36.0)
    return SceneSpec(seed=seed, room_half_extents=(half, 1.5, 1.3), primitives=tuple(prims),
                     trajectory="corridor", n_views=n_views, width=width, height=height,
                     corridor_start=(-total / 2 + 0.5, -0.6, 1.5),
                     corridor_end=(total / 2 - 0.5, -0.6, 1.5), **kw)
