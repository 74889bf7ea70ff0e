"""Cross-view instance association in 3D.

Each view's instance segments are lifted to world points and boxed; the local
boxes are matched against a growing global set with a Hungarian assignment on
``-IoU - IoM``.  A local segment whose matched cost stays above ``tau_new`` (or
that gets no partner) opens a new global instance, otherwise its points are
merged into the partner.  The index of an entry in the global set is the
scene-wide instance ID.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .geometry import CameraView, DepthMap, check_depth_matches, pixels_to_world
from .hungarian import hungarian
from .obb import ObbZ, box_iom, box_iou, fit_obb_z
from .raster_io import (INSTANCE, MAX_INSTANCES, UNKNOWN, LabeledPointCloud, LabelRaster,
                        read_ply_cloud, same_shape, write_ply_cloud)

log = logging.getLogger(__name__)

COST_MODES = ("iou+iom", "iou", "iom")


@dataclass(frozen=True)
class MatchConfig:
    tau_new: float = -0.1
    trim_pct: float = 0.02
    point_cap: int = 20000
    min_segment_px: int = 64
    max_instances: int = MAX_INSTANCES
    iou_mode: str = "sum"
    cost_mode: str = "iou+iom"
    erode_px: int = 1
    min_half_extent: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.trim_pct < 0.2:
            raise InvalidInputError("trim_pct must lie in [0, 0.2)")
        if self.point_cap < 100:
            raise InvalidInputError("point_cap must be >= 100")
        if self.min_segment_px < 1:
            raise InvalidInputError("min_segment_px must be >= 1")
        if self.max_instances < 1:
            raise InvalidInputError("max_instances must be >= 1")
        if self.iou_mode not in ("sum", "union"):
            raise InvalidInputError(f"iou_mode must be 'sum' or 'union', got {self.iou_mode!r}")
        if self.cost_mode not in COST_MODES:
            raise InvalidInputError(f"cost_mode must be one of {COST_MODES}")
        if self.erode_px < 0:
            raise InvalidInputError("erode_px must be >= 0")
        if not self.min_half_extent >= 0:
            raise InvalidInputError("min_half_extent must be >= 0")


@dataclass
class InstanceEntry:
    points: np.ndarray
    box: ObbZ


@dataclass
class GlobalInstanceSet:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def boxes(self) -> list:
        return [e.box for e in self.entries]


@dataclass
class LocalSegment:
    local_id: int
    sem_class: int
    pixels: np.ndarray  # flat indices that were lifted
    points: np.ndarray
    box: ObbZ


def match_cost(a: ObbZ, b: ObbZ, cfg: MatchConfig = MatchConfig()) -> float:
    if cfg.cost_mode == "iou":
        return -box_iou(a, b, cfg.iou_mode)
    if cfg.cost_mode == "iom":
        return -box_iom(a, b)
    return -box_iou(a, b, cfg.iou_mode) - box_iom(a, b)


def cost_matrix(local_boxes, global_boxes, cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    out = np.zeros((len(local_boxes), len(global_boxes)))
    for i, a in enumerate(local_boxes):
        for j, b in enumerate(global_boxes):
            out[i, j] = match_cost(a, b, cfg)
    return out


def _segment_class(sem: np.ndarray) -> Optional[int]:
    sem = sem[sem != UNKNOWN]
    if len(sem) == 0:
        return None
    vals, counts = np.unique(sem, return_counts=True)
    return int(vals[np.argmax(counts)])  # np.unique sorts, so ties pick the smaller class


def local_segments(view: CameraView, depth: DepthMap, inst_mask: LabelRaster, sem_mask: LabelRaster,
                   things: Iterable[int], cfg: MatchConfig = MatchConfig()) -> list[LocalSegment]:
    """Lift each things-class instance segment of one view to a boxed point set.

    A segment's class is the majority semantic label under it.  Segments are
    eroded by ``erode_px`` first so silhouette bleed does not drag background
    depth into the box; segments left with fewer than ``min_segment_px``
    valid pixels are ignored.
    """
    check_depth_matches(view, depth)
    same_shape(inst_mask, sem_mask, depth.values, what="instance mask, semantic mask and depth")
    things = set(int(t) for t in things)
    ids = np.unique(inst_mask.labels[inst_mask.known])
    out = []
    for lid in ids:
        seg = inst_mask.labels == lid
        cls = _segment_class(sem_mask.labels[seg])
        if cls is None or cls not in things:
            continue
        if cfg.erode_px:
            seg = ndimage.binary_erosion(seg, iterations=cfg.erode_px, border_value=1)
        flat = np.flatnonzero(seg & depth.valid)
        if len(flat) < cfg.min_segment_px:
            continue
        v, u = np.divmod(flat, view.width)
        pts = pixels_to_world(view, u, v, depth.values.ravel()[flat])
        out.append(LocalSegment(int(lid), cls, flat, pts, fit_obb_z(pts, cfg.trim_pct, cfg.min_half_extent)))
    return out


def _cap(points: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) <= cap:
        return points
    keep = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[keep]


def _admit(new: list[LocalSegment], room: int) -> list[LocalSegment]:
    """Keep at most ``room`` new segments, preferring larger boxes; order is preserved."""
    if len(new) <= room:
        return new
    order = sorted(range(len(new)), key=lambda i: (-new[i].box.volume, i))
    keep = set(order[:max(room, 0)])
    dropped = [new[i].local_id for i in range(len(new)) if i not in keep]
    log.warning("instance budget exhausted; dropping local segments %s", dropped)
    return [s for i, s in enumerate(new) if i in keep]


def associate(locals_: list[LocalSegment], global_set: GlobalInstanceSet,
              cfg: MatchConfig = MatchConfig()) -> dict[int, Optional[int]]:
    """Map each local segment index to its matched global index, or None for new."""
    if not global_set.entries or not locals_:
        return {i: None for i in range(len(locals_))}
    cost = cost_matrix([s.box for s in locals_], global_set.boxes(), cfg)
    out: dict[int, Optional[int]] = {i: None for i in range(len(locals_))}
    for li, gi in hungarian(cost):
        if cost[li, gi] <= cfg.tau_new:
            out[li] = gi
    return out


def update_global_set(global_set: GlobalInstanceSet, view: CameraView, depth: DepthMap,
                      inst_mask: LabelRaster, sem_mask: LabelRaster, things: Iterable[int],
                      cfg: MatchConfig = MatchConfig()) -> GlobalInstanceSet:
    """One step of the global instance set maintenance; returns a new set."""
    segs = local_segments(view, depth, inst_mask, sem_mask, things, cfg)
    entries = [replace(e) for e in global_set.entries]
    matches = associate(segs, global_set, cfg)
    for li, gi in matches.items():
        if gi is None:
            continue
        rng = np.random.default_rng([cfg.seed, int(view.view_id), gi])
        merged = _cap(np.concatenate([entries[gi].points, segs[li].points]), cfg.point_cap, rng)
        entries[gi] = InstanceEntry(merged, fit_obb_z(merged, cfg.trim_pct, cfg.min_half_extent))
    new = [segs[li] for li, gi in matches.items() if gi is None]
    for s in _admit(new, cfg.max_instances - len(entries)):
        rng = np.random.default_rng([cfg.seed, int(view.view_id), len(entries)])
        pts = _cap(s.points, cfg.point_cap, rng)
        box = s.box if len(pts) == len(s.points) else fit_obb_z(pts, cfg.trim_pct, cfg.min_half_extent)
        entries.append(InstanceEntry(pts, box))
    return GlobalInstanceSet(entries)


def match_sequence(views, depths, inst_masks, sem_masks, things, cfg: MatchConfig = MatchConfig()) -> GlobalInstanceSet:
    """Run the global set update over a whole sequence in order."""
    gs = GlobalInstanceSet()
    for view, depth, inst, sem in zip(views, depths, inst_masks, sem_masks):
        gs = update_global_set(gs, view, depth, inst, sem, things, cfg)
    return gs


# ---------------------------------------------------------------- 2D matching

def segment_iou_matrix(a: np.ndarray, b: np.ndarray):
    """IoU between every segment of label grid ``a`` (rows) and ``b`` (cols)."""
    a = a.ravel()
    b = b.ravel()
    a_ids = np.unique(a[a != UNKNOWN])
    b_ids = np.unique(b[b != UNKNOWN])
    ai = np.searchsorted(a_ids, a)
    bi = np.searchsorted(b_ids, b)
    both = (a != UNKNOWN) & (b != UNKNOWN)
    inter = np.zeros((len(a_ids), len(b_ids)))
    np.add.at(inter, (ai[both], bi[both]), 1)
    area_a = np.array([(a == i).sum() for i in a_ids], dtype=float)
    area_b = np.array([(b == i).sum() for i in b_ids], dtype=float)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return a_ids, b_ids, iou


def relabel_with_fresh_ids(m_ids, mapping: dict, taken: set, max_instances: int) -> dict:
    """Give unmatched segment ids the smallest free ids, in ascending id order."""
    used = set(taken) | set(mapping.values())
    free = (i for i in range(max_instances) if i not in used)
    out = dict(mapping)
    for m in m_ids:
        if int(m) not in out:
            out[int(m)] = next(free, UNKNOWN)
    return out


def match_masks_2d(rendered: LabelRaster, m2f: LabelRaster, max_instances: int = MAX_INSTANCES) -> LabelRaster:
    """Relabel machine-mask segments with the ids of their best-overlapping rendered segments.

    Segments are paired by a Hungarian assignment on negative IoU.  Pairs
    with zero overlap do not count as matches; unmatched segments take the
    smallest ids unused by ``rendered`` (UNKNOWN once the id space runs out).
    """
    same_shape(rendered, m2f, what="rendered and machine instance masks")
    m_ids, r_ids, iou = segment_iou_matrix(m2f.labels, rendered.labels)
    mapping = {}
    for mi, ri in hungarian(-iou):
        if iou[mi, ri] > 0:
            mapping[int(m_ids[mi])] = int(r_ids[ri])
    mapping = relabel_with_fresh_ids(m_ids, mapping, set(int(r) for r in r_ids), max_instances)
    out = np.full(m2f.labels.shape, UNKNOWN, dtype=np.uint16)
    for m, target in mapping.items():
        out[m2f.labels == m] = target
    return LabelRaster(out, INSTANCE)


# ---------------------------------------------------------------- serialization

def write_global_set(global_set: GlobalInstanceSet, ply_path, json_path):
    pts = [e.points for e in global_set.entries]
    ids = [np.full(len(p), i, np.uint16) for i, p in enumerate(pts)]
    cloud = LabeledPointCloud(np.concatenate(pts) if pts else np.zeros((0, 3)),
                              np.zeros(sum(len(p) for p in pts), np.uint16),
                              np.concatenate(ids) if ids else np.zeros(0, np.uint16))
    write_ply_cloud(cloud, ply_path, comments=["global instance set"])
    doc = {"instances": [dict(id=i, points=int(len(e.points)), **e.box.to_dict())
                         for i, e in enumerate(global_set.entries)]}
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def read_global_set(ply_path, json_path, max_instances: int = MAX_INSTANCES) -> GlobalInstanceSet:
    cloud = read_ply_cloud(ply_path, inst_bound=max_instances)
    with open(json_path) as f:
        doc = json.load(f)
    entries = []
    for item in doc["instances"]:
        pts = cloud.points[cloud.inst_labels == item["id"]]
        box = ObbZ(tuple(item["center"]), item["yaw"], tuple(item["half_extents"]), item.get("degenerate", False))
        entries.append(InstanceEntry(pts, box))
    return GlobalInstanceSet(entries)
