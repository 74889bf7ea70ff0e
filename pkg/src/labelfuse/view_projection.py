"""Z-buffered projection of labeled clouds onto camera views."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraView, DepthMap, check_depth_matches, project_points
from .raster_io import INSTANCE, SEMANTIC, UNKNOWN, LabeledPointCloud, LabelRaster


@dataclass(frozen=True)
class ProjectionConfig:
    splat_radius: int = 1
    depth_gate: float = 0.1  # 2 * default voxel size

    def __post_init__(self):
        if self.splat_radius < 0:
            raise InvalidInputError("splat_radius must be >= 0")
        if not self.depth_gate >= 0:
            raise InvalidInputError("depth_gate must be >= 0")


def project_cloud_to_mask(cloud: LabeledPointCloud, view: CameraView, depth: DepthMap,
                          splat_radius: int = 1, depth_gate: float = 0.1,
                          label_channel: str = "sem") -> LabelRaster:
    """Splat each point's label onto a (2r+1)^2 pixel square around its landing pixel.

    A write only counts where the point's camera depth is within
    ``depth_gate`` of the view's own depth; among competing writes the
    nearest point wins, then the smaller label.
    """
    check_depth_matches(view, depth)
    if splat_radius < 0:
        raise InvalidInputError("splat_radius must be >= 0")
    if label_channel == "sem":
        labels, kind = cloud.sem_labels, SEMANTIC
    elif label_channel == "inst":
        if cloud.inst_labels is None:
            raise InvalidInputError("cloud has no instance labels")
        labels, kind = cloud.inst_labels, INSTANCE
    else:
        raise InvalidInputError(f"unknown label channel {label_channel!r}")

    out = np.full(view.width * view.height, UNKNOWN, dtype=np.uint16)
    keep = labels != UNKNOWN
    if not keep.any():
        return LabelRaster(out.reshape(view.height, view.width), kind)
    uv, z = project_points(view, cloud.points[keep])
    labels = labels[keep]
    front = z > 0
    uv, z, labels = uv[front], z[front], labels[front]
    iu = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    iv = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    dvals = depth.values.ravel()

    flats, zs, labs = [], [], []
    r = splat_radius
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            pu, pv = iu + du, iv + dv
            inside = (pu >= 0) & (pu < view.width) & (pv >= 0) & (pv < view.height)
            flat = pv[inside] * view.width + pu[inside]
            zi = z[inside]
            ok = np.abs(zi - dvals[flat]) <= depth_gate
            flats.append(flat[ok])
            zs.append(zi[ok])
            labs.append(labels[inside][ok])
    flat = np.concatenate(flats)
    if len(flat):
        zc = np.concatenate(zs)
        lab = np.concatenate(labs)
        order = np.lexsort((lab, zc, flat))
        flat, lab = flat[order], lab[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        out[flat[first]] = lab[first]
    return LabelRaster(out.reshape(view.height, view.width), kind)


def instance_cloud(global_set) -> LabeledPointCloud:
    """Flatten a global instance set into one cloud whose inst label is the entry index."""
    pts = [e.points for e in global_set.entries]
    if not pts:
        return LabeledPointCloud.empty(with_inst=True)
    ids = [np.full(len(p), i, dtype=np.uint16) for i, p in enumerate(pts)]
    inst = np.concatenate(ids)
    return LabeledPointCloud(np.concatenate(pts), np.zeros(len(inst), np.uint16), inst)


def project_instances_to_masks(global_set, consistent_sem: LabelRaster, things: Iterable[int],
                               view: CameraView, depth: DepthMap,
                               cfg: ProjectionConfig = ProjectionConfig()) -> LabelRaster:
    """Consistent instance mask: projected global IDs, kept only on things pixels."""
    if (consistent_sem.width, consistent_sem.height) != (view.width, view.height):
        raise InvalidInputError("consistent semantic mask does not match the view")
    mask = project_cloud_to_mask(instance_cloud(global_set), view, depth,
                                 cfg.splat_radius, cfg.depth_gate, "inst")
    things = np.array(sorted(set(int(t) for t in things)), dtype=np.int64)
    is_thing = np.isin(consistent_sem.labels, things)
    mask.labels[~is_thing] = UNKNOWN
    return mask
