"""Scene-level mIoU and panoptic quality over a set of views gathered as one image."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .raster_io import UNKNOWN, LabelRaster

_STUFF_SLOT = 65536
_KEY_BASE = 65537


@dataclass
class SceneEvalReport:
    miou: float = 0.0
    per_class_iou: dict = field(default_factory=dict)
    pq_scene: float = 0.0
    sq: float = 0.0
    rq: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = {str(k): v for k, v in sorted(self.per_class_iou.items())}
        return d

    def to_text(self) -> str:
        lines = [f"{'metric':<10}{'value':>10}"]
        for name in ("miou", "pq_scene", "sq", "rq"):
            lines.append(f"{name:<10}{getattr(self, name):>10.4f}")
        for name in ("tp", "fp", "fn"):
            lines.append(f"{name:<10}{getattr(self, name):>10d}")
        lines.append("")
        lines.append(f"{'class':<10}{'iou':>10}")
        for c, v in sorted(self.per_class_iou.items()):
            lines.append(f"{c:<10}{v:>10.4f}")
        return "\n".join(lines) + "\n"


def _flat(rasters: Sequence) -> np.ndarray:
    arrs = [r.labels if isinstance(r, LabelRaster) else np.asarray(r) for r in rasters]
    return np.concatenate([a.ravel() for a in arrs]).astype(np.int64) if arrs else np.zeros(0, np.int64)


def _check(pred: Sequence, gt: Sequence):
    if len(pred) != len(gt):
        raise InvalidInputError(f"{len(pred)} predicted views vs {len(gt)} ground-truth views")
    for i, (p, g) in enumerate(zip(pred, gt)):
        ps = p.labels.shape if isinstance(p, LabelRaster) else np.shape(p)
        gs = g.labels.shape if isinstance(g, LabelRaster) else np.shape(g)
        if ps != gs:
            raise InvalidInputError(f"view {i}: prediction {ps} vs ground truth {gs}")


def scene_miou(pred: Sequence, gt: Sequence):
    """Mean IoU over classes present in the ground truth, all views concatenated.

    Ground-truth UNKNOWN pixels are ignored; a predicted UNKNOWN on a labeled
    pixel counts as a miss.
    """
    _check(pred, gt)
    p = _flat(pred)
    g = _flat(gt)
    known = g != UNKNOWN
    p, g = p[known], g[known]
    per_class = {}
    for c in np.unique(g):
        pc, gc = p == c, g == c
        inter = int(np.sum(pc & gc))
        union = int(np.sum(pc | gc))
        per_class[int(c)] = inter / union
    miou = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return miou, per_class


def segment_keys(sem: np.ndarray, inst: np.ndarray, things: Iterable[int]) -> np.ndarray:
    """Per-pixel segment key: class+instance for things, class alone for stuff, -1 if unlabeled."""
    sem = np.asarray(sem, dtype=np.int64)
    inst = np.asarray(inst, dtype=np.int64)
    is_thing = np.isin(sem, np.array(sorted(set(int(t) for t in things)), dtype=np.int64))
    keys = sem * _KEY_BASE + np.where(is_thing, inst, _STUFF_SLOT)
    void = (sem == UNKNOWN) | (is_thing & (inst == UNKNOWN))
    return np.where(void, -1, keys)


def key_class(keys):
    return np.asarray(keys) // _KEY_BASE


def restrict_to_covered(pred_sem, pred_inst, gt_sem, gt_inst, things):
    """Blank the ground truth wherever the prediction leaves a pixel unlabeled."""
    out_sem, out_inst = [], []
    for ps, pi, gs, gi in zip(pred_sem, pred_inst, gt_sem, gt_inst):
        ps_a = ps.labels if isinstance(ps, LabelRaster) else np.asarray(ps)
        pi_a = pi.labels if isinstance(pi, LabelRaster) else np.asarray(pi)
        covered = segment_keys(ps_a, pi_a, things) >= 0
        gs_a = (gs.labels if isinstance(gs, LabelRaster) else np.asarray(gs)).copy()
        gi_a = (gi.labels if isinstance(gi, LabelRaster) else np.asarray(gi)).copy()
        gs_a[~covered] = UNKNOWN
        gi_a[~covered] = UNKNOWN
        out_sem.append(LabelRaster(gs_a))
        out_inst.append(LabelRaster(gi_a, "instance"))
    return out_sem, out_inst


def pq_scene(pred_sem: Sequence, pred_inst: Sequence, gt_sem: Sequence, gt_inst: Sequence,
             things: Iterable[int]) -> SceneEvalReport:
    """Panoptic quality with segments defined over all views at once.

    A things segment is every pixel (in any view) sharing a class and an
    instance ID, so an object only scores if its ID agrees across views.
    Predicted and ground-truth segments of the same class match when their
    IoU exceeds 0.5.  Ground-truth void pixels are dropped from every term.
    """
    for pred in (pred_sem, pred_inst, gt_inst):
        _check(pred, gt_sem)
    things = set(int(t) for t in things)
    pk = segment_keys(_flat(pred_sem), _flat(pred_inst), things)
    gk = segment_keys(_flat(gt_sem), _flat(gt_inst), things)
    valid = gk >= 0
    pk, gk = pk[valid], gk[valid]

    g_ids, g_area = np.unique(gk, return_counts=True)
    labeled = pk >= 0
    p_ids, p_area = np.unique(pk[labeled], return_counts=True)
    pairs, inter = np.unique(np.stack([gk[labeled], pk[labeled]]), axis=1, return_counts=True)

    tp_iou = []
    g_matched, p_matched = set(), set()
    for (gkey, pkey), n in zip(pairs.T, inter):
        if key_class(gkey) != key_class(pkey):
            continue
        ga = g_area[np.searchsorted(g_ids, gkey)]
        pa = p_area[np.searchsorted(p_ids, pkey)]
        iou = n / (ga + pa - n)
        if iou > 0.5:
            tp_iou.append(iou)
            g_matched.add(int(gkey))
            p_matched.add(int(pkey))
    tp = len(tp_iou)
    fp = len(p_ids) - len(p_matched)
    fn = len(g_ids) - len(g_matched)
    denom = tp + 0.5 * fp + 0.5 * fn
    iou_sum = float(np.sum(tp_iou)) if tp else 0.0
    report = SceneEvalReport(
        pq_scene=iou_sum / denom if denom else 0.0,
        sq=iou_sum / tp if tp else 0.0,
        rq=tp / denom if denom else 0.0,
        tp=tp, fp=fp, fn=fn,
    )
    report.miou, report.per_class_iou = scene_miou(pred_sem, gt_sem)
    return report
