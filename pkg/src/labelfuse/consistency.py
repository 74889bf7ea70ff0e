"""Cross-view filtering of per-image semantic masks.

Each neighbor's labels are forward-warped onto the reference image; a
reference pixel survives only if every label landing on it agrees with its
own.  Pixels nothing lands on keep their label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraView, DepthMap, check_depth_matches, warp_pixels
from .raster_io import UNKNOWN, LabelRaster, same_shape


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 4
    occlusion_tol: float = 0.05

    def __post_init__(self):
        if self.window_size < 0:
            raise InvalidInputError("window_size must be >= 0")
        if not self.occlusion_tol >= 0:
            raise InvalidInputError("occlusion_tol must be >= 0")


@dataclass
class ConsistencyMask:
    q: np.ndarray  # uint8 {0,1}, shape (H, W)

    @property
    def width(self) -> int:
        return self.q.shape[1]

    @property
    def height(self) -> int:
        return self.q.shape[0]


def neighbor_views(ref_view_id, all_views: Sequence, cfg: WindowConfig) -> list:
    """The ``window_size`` views closest to ``ref_view_id`` in sequence order.

    The window holds ``window_size // 2`` views before the reference and the
    rest after it; near either end of the sequence it slides inward.
    """
    ids = list(all_views)
    i = ids.index(ref_view_id)
    n = min(cfg.window_size, len(ids) - 1)
    before = n // 2
    lo, hi = i - before, i + (n - before)
    if lo < 0:
        lo, hi = 0, hi - lo
    if hi > len(ids) - 1:
        lo, hi = lo - (hi - len(ids) + 1), len(ids) - 1
    lo = max(lo, 0)
    return [ids[j] for j in range(lo, hi + 1) if j != i]


def consistency_mask(ref_view: CameraView, ref_depth: DepthMap, ref_sem: LabelRaster,
                     neighbors: Sequence[tuple[CameraView, DepthMap, LabelRaster]],
                     cfg: WindowConfig = WindowConfig()) -> ConsistencyMask:
    _check_view(ref_view, ref_depth, ref_sem)
    ref_labels = ref_sem.labels.ravel()
    q = (ref_depth.valid.ravel() & (ref_labels != UNKNOWN)).astype(np.uint8)
    for view, depth, sem in neighbors:
        _check_view(view, depth, sem)
        src, dst = warp_pixels(view, depth, ref_view, ref_depth, cfg.occlusion_tol, mask=sem.known)
        disagree = sem.labels.ravel()[src] != ref_labels[dst]
        q[dst[disagree]] = 0
    return ConsistencyMask(q.reshape(ref_sem.labels.shape))


def apply_consistency(mask: LabelRaster, q: ConsistencyMask) -> LabelRaster:
    same_shape(mask, q.q, what="mask and consistency mask")
    return LabelRaster(np.where(q.q.astype(bool), mask.labels, UNKNOWN).astype(np.uint16), mask.kind)


def filter_sequence(views: Sequence[CameraView], depths: Sequence[DepthMap],
                    sems: Sequence[LabelRaster], cfg: WindowConfig, executor=None):
    """Consistency-filter every view of a sequence; returns (filtered, q masks)."""
    ids = [v.view_id for v in views]
    index = {vid: k for k, vid in enumerate(ids)}

    def one(k):
        nbrs = [(views[index[j]], depths[index[j]], sems[index[j]])
                for j in neighbor_views(ids[k], ids, cfg)]
        q = consistency_mask(views[k], depths[k], sems[k], nbrs, cfg)
        return apply_consistency(sems[k], q), q

    mapper = executor.map if executor is not None else map
    results = list(mapper(one, range(len(views))))
    return [r[0] for r in results], [r[1] for r in results]


def _check_view(view: CameraView, depth: DepthMap, raster: LabelRaster):
    check_depth_matches(view, depth)
    if (raster.width, raster.height) != (view.width, view.height):
        raise InvalidInputError(
            f"view {view.view_id}: raster is {raster.width}x{raster.height}, "
            f"camera is {view.width}x{view.height}"
        )
