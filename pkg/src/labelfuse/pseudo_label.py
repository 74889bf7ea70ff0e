"""Segment-wise relabeling of machine masks by majority vote over a consistent mask."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .raster_io import UNKNOWN, LabelRaster, same_shape

_STRUCTURE = {4: ndimage.generate_binary_structure(2, 1), 8: ndimage.generate_binary_structure(2, 2)}


class Regions(NamedTuple):
    ids: np.ndarray  # (H, W) int64, -1 where no region
    count: int


def region_grow(mask: LabelRaster, connectivity: int = 4, min_region_px: int = 32) -> Regions:
    """Split a label mask into maximal connected same-label regions.

    Regions are numbered in raster-scan order of their first pixel.  Regions
    smaller than ``min_region_px`` and UNKNOWN pixels get id -1.
    """
    if connectivity not in _STRUCTURE:
        raise InvalidInputError(f"connectivity must be 4 or 8, got {connectivity}")
    labels = mask.labels
    comp = np.full(labels.shape, -1, dtype=np.int64)
    offset = 0
    for value in np.unique(labels[labels != UNKNOWN]):
        lab, n = ndimage.label(labels == value, structure=_STRUCTURE[connectivity])
        hit = lab > 0
        comp[hit] = lab[hit] - 1 + offset
        offset += n
    if offset == 0:
        return Regions(comp, 0)
    flat = comp.ravel()
    sizes = np.bincount(flat[flat >= 0], minlength=offset)
    first = np.full(offset, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[flat >= 0], np.flatnonzero(flat >= 0))
    keep = sizes >= min_region_px
    rank = np.full(offset, -1, dtype=np.int64)
    kept = np.flatnonzero(keep)
    rank[kept[np.argsort(first[kept], kind="stable")]] = np.arange(len(kept))
    out = np.where(flat >= 0, rank[np.maximum(flat, 0)], -1)
    return Regions(out.reshape(labels.shape), int(len(kept)))


def _joint(sem: LabelRaster, inst: LabelRaster) -> LabelRaster:
    """One label per (class, instance) pair, dense from 0, UNKNOWN where the class is."""
    keys = sem.labels.astype(np.int64) * 65536 + inst.labels
    known = sem.labels != UNKNOWN
    out = np.full(keys.shape, UNKNOWN, dtype=np.int64)
    if known.any():
        _, dense = np.unique(keys[known], return_inverse=True)
        out[known] = dense.reshape(-1)
    if out.max(initial=0) >= UNKNOWN:
        raise InvalidInputError("too many distinct segments")
    return LabelRaster(out.astype(np.uint16), sem.kind)


def fuse_pseudo_label(m2f: LabelRaster, reference: LabelRaster, connectivity: int = 4,
                      min_region_px: int = 32, instances: LabelRaster | None = None) -> LabelRaster:
    """Give every region of ``m2f`` the label most frequent under it in ``reference``.

    UNKNOWN reference pixels do not vote.  A region with no votes keeps its
    own label; on a tied vote the region's own label wins if it is among the
    leaders, otherwise the smallest leading label.  With ``instances`` the
    regions are grown over (class, instance) pairs, so an object mislabeled
    with its background's class stays its own region.
    """
    same_shape(m2f, reference, what="machine mask and reference mask")
    if instances is None:
        regions, n = region_grow(m2f, connectivity, min_region_px)
    else:
        same_shape(m2f, instances, what="machine semantic and instance masks")
        regions, n = region_grow(_joint(m2f, instances), connectivity, min_region_px)
    r = regions.ravel()
    out = np.full(r.shape, UNKNOWN, dtype=np.uint16)
    if n == 0:
        return LabelRaster(out.reshape(m2f.labels.shape), m2f.kind)
    own = np.zeros(n, dtype=np.int64)
    inside = r >= 0
    own[r[inside]] = m2f.labels.ravel()[inside]
    result = own.copy()

    ref = reference.labels.ravel()
    vote = inside & (ref != UNKNOWN)
    if vote.any():
        keys = r[vote] * 65536 + ref[vote].astype(np.int64)
        uniq, counts = np.unique(keys, return_counts=True)
        reg, lab = uniq // 65536, uniq % 65536
        best = np.zeros(n, dtype=np.int64)
        np.maximum.at(best, reg, counts)
        leader = counts == best[reg]
        reg, lab = reg[leader], lab[leader]
        voted = np.unique(reg)
        smallest = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(smallest, reg, lab)
        own_leads = np.zeros(n, dtype=bool)
        own_leads[reg[lab == own[reg]]] = True
        result[voted] = np.where(own_leads[voted], own[voted], smallest[voted])
    out[inside] = result[r[inside]]
    return LabelRaster(out.reshape(m2f.labels.shape), m2f.kind)
