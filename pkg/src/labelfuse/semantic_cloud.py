"""Robust semantic point cloud: lift filtered labels, cluster, vote, voxelize."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .consistency import WindowConfig, filter_sequence
from .errors import InvalidInputError
from .geometry import CameraView, DepthMap, pixels_to_world
from .raster_io import UNKNOWN, LabeledPointCloud, LabelRaster


@dataclass(frozen=True)
class KMeansConfig:
    k: Optional[int] = None  # None: derive from point count
    max_iters: int = 50
    tol: float = 1e-4
    seed: int = 0
    points_per_cluster: int = 5

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise InvalidInputError("kmeans.k must be >= 1")
        if self.max_iters < 1:
            raise InvalidInputError("kmeans.max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidInputError("kmeans.tol must be > 0")
        if self.points_per_cluster < 1:
            raise InvalidInputError("kmeans.points_per_cluster must be >= 1")


@dataclass
class AnchorGrid:
    voxel_size: float
    anchors: np.ndarray  # (M, 3)
    anchor_sem: np.ndarray  # (M,) uint16

    def as_cloud(self) -> LabeledPointCloud:
        return LabeledPointCloud(self.anchors, self.anchor_sem)

    def __len__(self):
        return len(self.anchors)


@dataclass(frozen=True)
class CloudConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    voxel_size: float = 0.05
    stride: int = 4

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise InvalidInputError("voxel_size must be > 0")
        if self.stride < 1:
            raise InvalidInputError("stride must be >= 1")


@dataclass
class SemanticCloud:
    centers: LabeledPointCloud  # cluster centers carrying voted labels
    anchors: AnchorGrid
    points: LabeledPointCloud  # lifted points relabeled with their cluster's vote
    raw_labels: np.ndarray  # lifted labels before voting
    assignment: np.ndarray
    filtered: list  # per-view rasters that were lifted


def lift_indices(view: CameraView, depth: DepthMap, raster: LabelRaster, stride: int = 4):
    """Flat pixel indices lifted from one view, in row-major order."""
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    grid = np.zeros(raster.labels.shape, dtype=bool)
    grid[::stride, ::stride] = True
    return np.flatnonzero(grid & raster.known & depth.valid)


def lift_labels(views: Sequence[tuple[CameraView, DepthMap, LabelRaster]], stride: int = 4) -> LabeledPointCloud:
    """One labeled world point per known, valid-depth pixel on a stride grid."""
    pts, labels, src = [], [], []
    for view, depth, raster in views:
        flat = lift_indices(view, depth, raster, stride)
        v, u = np.divmod(flat, view.width)
        pts.append(pixels_to_world(view, u, v, depth.values.ravel()[flat]))
        labels.append(raster.labels.ravel()[flat])
        src.append(np.full(len(flat), view.view_id, dtype=np.int64))
    if not pts:
        return LabeledPointCloud.empty()
    return LabeledPointCloud(np.concatenate(pts), np.concatenate(labels), source_view=np.concatenate(src))


def default_k(points: np.ndarray, voxel_size: float, points_per_cluster: int = 5) -> int:
    n = len(points)
    k = math.ceil(n / points_per_cluster)
    extent = np.ptp(points, axis=0) if n else np.zeros(3)
    cap = 50.0 * float(np.prod(np.maximum(extent, voxel_size))) / voxel_size ** 3
    return int(max(1, min(k, cap, n)))


def _nearest(points, centers):
    """Index of the nearest center per point; exact ties go to the lowest index."""
    if len(centers) <= 32:
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)
    tree = cKDTree(centers)
    m = min(4, len(centers))
    dist, idx = tree.query(points, k=m)
    # candidates tied with the best distance: keep the smallest center index
    tied = dist == dist[:, :1]
    return np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)


def _means(points, assignment, k):
    counts = np.bincount(assignment, minlength=k)
    sums = np.stack([np.bincount(assignment, weights=points[:, d], minlength=k) for d in range(3)], 1)
    return sums, counts


def _cells(points, per_cell=64):
    """Order points by coarse grid cell; returns (order, cell start offsets)."""
    lo = points.min(0)
    ext = np.maximum(np.ptp(points, axis=0), 1e-9)
    area = 2 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])  # lifted points lie on surfaces
    h = max(np.sqrt(area * per_cell / len(points)), 1e-9)
    cell = np.floor((points - lo) / h).astype(np.int64)
    order = np.lexsort((cell[:, 2], cell[:, 1], cell[:, 0]))
    c = cell[order]
    starts = np.flatnonzero(np.r_[True, np.any(c[1:] != c[:-1], axis=1)])
    return order, np.r_[starts, len(points)]


def _plusplus(points, k, rng):
    """k-means++ seeding (D^2 sampling).

    Points are bucketed into grid cells so that each new center only touches
    cells whose bounding box could hold a point closer to it than that
    point's current nearest center; sampling picks a cell by its D^2 mass,
    then a point inside it.
    """
    n = len(points)
    order, bounds = _cells(points)
    pts = points[order]
    nc = len(bounds) - 1
    sizes = np.diff(bounds)
    box_lo = np.minimum.reduceat(pts, bounds[:-1], axis=0)
    box_hi = np.maximum.reduceat(pts, bounds[:-1], axis=0)

    first = int(rng.integers(n))
    chosen = [first]
    d2 = ((pts - points[first]) ** 2).sum(1)
    mass = np.add.reduceat(d2, bounds[:-1])
    worst = np.maximum.reduceat(d2, bounds[:-1])
    picked = np.zeros(n, dtype=bool)
    picked[np.flatnonzero(order == first)[0]] = True
    for _ in range(1, k):
        total = mass.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            free = np.flatnonzero(~picked)
            j = int(free[rng.integers(len(free))])
        else:
            r = rng.random() * total
            cum = np.cumsum(mass)
            c = min(int(np.searchsorted(cum, r, side="right")), nc - 1)
            while mass[c] <= 0:  # r landed on the far edge of a run of empty cells
                c -= 1
            s, e = bounds[c], bounds[c + 1]
            local = np.cumsum(d2[s:e])
            j = s + int(np.searchsorted(local, r - (cum[c] - mass[c]), side="right"))
            if j >= e or d2[j] <= 0:  # rounding pushed past the cell's last positive entry
                j = s + int(np.flatnonzero(d2[s:e] > 0)[-1])
        picked[j] = True
        chosen.append(int(order[j]))
        p = pts[j]
        gap = np.maximum(np.maximum(box_lo - p, p - box_hi), 0.0)
        near = np.flatnonzero(np.einsum("ij,ij->i", gap, gap) < worst)
        if len(near) == 0:
            continue
        lens = sizes[near]
        # flat indices of every point in the touched cells, without a Python loop
        seg = np.zeros(len(near), dtype=np.int64)
        np.cumsum(lens[:-1], out=seg[1:])
        idx = np.arange(int(seg[-1] + lens[-1])) + np.repeat(bounds[near] - seg, lens)
        diff = pts[idx] - p
        d2[idx] = np.minimum(d2[idx], np.einsum("ij,ij->i", diff, diff))
        mass[near] = np.add.reduceat(d2[idx], seg)
        worst[near] = np.maximum.reduceat(d2[idx], seg)
    return points[chosen].copy()


def inertia(points, centers, assignment) -> float:
    return float(((points - centers[assignment]) ** 2).sum())


def kmeans(points, cfg: KMeansConfig, history: Optional[list] = None):
    """Lloyd's algorithm from k-means++ seeds.

    Returns ``(centers, assignment)`` where each center is the mean of the
    points assigned to it.  ``history``, if given, receives the within-cluster
    sum of squares after every assignment step.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    k = cfg.k
    if len(pts) == 0:
        raise InvalidInputError("kmeans needs at least one point")
    if k is None:
        raise InvalidInputError("kmeans needs an explicit k")
    if k > len(pts):
        raise InvalidInputError(f"k={k} exceeds point count {len(pts)}")
    rng = np.random.default_rng(cfg.seed)
    centers = _plusplus(pts, k, rng)
    assignment = _nearest(pts, centers)
    for _ in range(cfg.max_iters):
        if history is not None:
            history.append(inertia(pts, centers, assignment))
        sums, counts = _means(pts, assignment, k)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            # re-seed empty clusters on the worst-fit points
            err = ((pts - new[assignment]) ** 2).sum(1)
            for c, p in zip(np.flatnonzero(~filled), np.argsort(-err, kind="stable")):
                new[c] = pts[p]
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        prev = assignment
        assignment = _nearest(pts, centers)
        if shift < cfg.tol or np.array_equal(prev, assignment):
            break
    if history is not None:
        history.append(inertia(pts, centers, assignment))
    sums, counts = _means(pts, assignment, k)
    filled = counts > 0
    centers[filled] = sums[filled] / counts[filled, None]
    return centers, assignment


def _mode_per_group(groups, labels, n_groups):
    """Most frequent label per group; ties go to the smallest label, empty groups to UNKNOWN."""
    out = np.full(n_groups, UNKNOWN, dtype=np.uint16)
    if len(groups) == 0:
        return out
    keys = np.asarray(groups, dtype=np.int64) * 65536 + np.asarray(labels, dtype=np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    g, lab = uniq // 65536, uniq % 65536
    order = np.lexsort((lab, -counts, g))
    g, lab = g[order], lab[order]
    first = np.ones(len(g), dtype=bool)
    first[1:] = g[1:] != g[:-1]
    out[g[first]] = lab[first]
    return out


def vote_cluster_labels(assignment, sem_labels, k: int) -> np.ndarray:
    return _mode_per_group(assignment, sem_labels, k)


def voxelize(cloud: LabeledPointCloud, voxel_size: float) -> AnchorGrid:
    """Snap points to the voxel grid (round half up) and deduplicate.

    Anchors come out sorted by voxel index; each carries the modal label of
    the points that snapped to it.
    """
    if not voxel_size > 0:
        raise InvalidInputError("voxel size must be > 0")
    if len(cloud) == 0:
        return AnchorGrid(voxel_size, np.zeros((0, 3)), np.zeros(0, np.uint16))
    idx = np.floor(cloud.points / voxel_size + 0.5).astype(np.int64)
    cells, inverse = np.unique(idx, axis=0, return_inverse=True)
    labels = _mode_per_group(inverse.reshape(-1), cloud.sem_labels, len(cells))
    return AnchorGrid(voxel_size, cells * voxel_size, labels)


def build_semantic_cloud(views: Sequence[CameraView], depths: Sequence[DepthMap],
                         sems: Sequence[LabelRaster], cfg: CloudConfig = CloudConfig(),
                         executor=None) -> SemanticCloud:
    """Filter, lift, cluster, vote and voxelize.

    With ``window_size == 0`` the masks are lifted as given.
    """
    if not views:
        raise InvalidInputError("build_semantic_cloud needs at least one view")
    if cfg.window.window_size > 0:
        filtered, _ = filter_sequence(views, depths, sems, cfg.window, executor)
    else:
        filtered = list(sems)
    cloud = lift_labels(list(zip(views, depths, filtered)), cfg.stride)
    if len(cloud) == 0:
        empty = LabeledPointCloud.empty()
        return SemanticCloud(empty, voxelize(empty, cfg.voxel_size), empty,
                             np.zeros(0, np.uint16), np.zeros(0, np.int64), filtered)
    k = cfg.kmeans.k or default_k(cloud.points, cfg.voxel_size, cfg.kmeans.points_per_cluster)
    k = min(k, len(cloud))
    km = KMeansConfig(k, cfg.kmeans.max_iters, cfg.kmeans.tol, cfg.kmeans.seed, cfg.kmeans.points_per_cluster)
    centers, assignment = kmeans(cloud.points, km)
    voted = vote_cluster_labels(assignment, cloud.sem_labels, k)
    smoothed = LabeledPointCloud(cloud.points, voted[assignment], source_view=cloud.source_view)
    return SemanticCloud(
        centers=LabeledPointCloud(centers, voted),
        anchors=voxelize(smoothed, cfg.voxel_size),
        points=smoothed,
        raw_labels=cloud.sem_labels,
        assignment=assignment,
        filtered=filtered,
    )
