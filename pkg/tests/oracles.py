"""Independent reference implementations used by several test files."""

import itertools
import math
from collections import Counter, deque

import numpy as np

UNKNOWN = 65535


def flood_regions(labels, connectivity=4, min_region_px=1):
    """Breadth-first connected components of equal label; -1 for UNKNOWN or small regions."""
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=int)
    steps = [(0, 1), (1, 0), (0, -1), (-1, 0)]
    if connectivity == 8:
        steps += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    regions = []
    seen = np.zeros((h, w), bool)
    for i in range(h):
        for j in range(w):
            if seen[i, j] or labels[i, j] == UNKNOWN:
                continue
            members, queue = [], deque([(i, j)])
            seen[i, j] = True
            while queue:
                a, b = queue.popleft()
                members.append((a, b))
                for da, db in steps:
                    x, y = a + da, b + db
                    if 0 <= x < h and 0 <= y < w and not seen[x, y] and labels[x, y] == labels[i, j]:
                        seen[x, y] = True
                        queue.append((x, y))
            if len(members) >= min_region_px:
                for a, b in members:
                    comp[a, b] = len(regions)
                regions.append(members)
    return comp, regions


def histogram_fusion(m2f, reference, connectivity=4, min_region_px=1):
    """Per-region argmax of the reference histogram with the documented tie rules."""
    comp, regions = flood_regions(m2f, connectivity, min_region_px)
    out = np.full(m2f.shape, UNKNOWN, dtype=int)
    for members in regions:
        own = int(m2f[members[0]])
        votes = Counter(int(reference[p]) for p in members if reference[p] != UNKNOWN)
        if not votes:
            label = own
        else:
            top = max(votes.values())
            leaders = [lab for lab, c in votes.items() if c == top]
            label = own if own in leaders else min(leaders)
        for p in members:
            out[p] = label
    return out


def scene_segments(sems, insts, things):
    """Map (class, instance-or-None) -> set of (view, flat pixel) over GT-known pixels."""
    segs = {}
    for v, (s, i) in enumerate(zip(sems, insts)):
        for flat, (c, k) in enumerate(zip(np.ravel(s), np.ravel(i))):
            c, k = int(c), int(k)
            if c == UNKNOWN or (c in things and k == UNKNOWN):
                continue
            key = (c, k if c in things else None)
            segs.setdefault(key, set()).add((v, flat))
    return segs


def brute_force_pq(pred_sem, pred_inst, gt_sem, gt_inst, things):
    """PQ by explicit set algebra, trying every one-to-one same-class matching.

    Returns (pq, sq, rq, tp, fp, fn).  Pixels void in the GT (unknown class,
    or a things class without an instance) are removed from the prediction
    first, and predicted segments left empty vanish.
    """
    things = set(things)
    ps = []
    for p, g, gi in zip(pred_sem, gt_sem, gt_inst):
        g, gi = np.asarray(g), np.asarray(gi)
        void = (g == UNKNOWN) | (np.isin(g, list(things)) & (gi == UNKNOWN))
        ps.append(np.where(void, UNKNOWN, p))
    gt = scene_segments(gt_sem, gt_inst, things)
    pred = scene_segments(ps, pred_inst, things)
    classes = sorted({k[0] for k in gt} | {k[0] for k in pred})
    per_class = []
    for c in classes:
        g = [k for k in gt if k[0] == c]
        p = [k for k in pred if k[0] == c]
        top = (0.0, 0)
        small, large = (g, p) if len(g) <= len(p) else (p, g)
        for chosen in itertools.permutations(large, len(small)):
            total, count = 0.0, 0
            for a, b in zip(small, chosen):
                ga, pb = (gt[a], pred[b]) if small is g else (gt[b], pred[a])
                iou = len(ga & pb) / len(ga | pb)
                if iou > 0.5:
                    total += iou
                    count += 1
            if (count, total) > (top[1], top[0]):
                top = (total, count)
        per_class.append((top[0], top[1], len(g), len(p)))
    iou_sum = sum(t[0] for t in per_class)
    tp = sum(t[1] for t in per_class)
    fn = sum(t[2] for t in per_class) - tp
    fp = sum(t[3] for t in per_class) - tp
    denom = tp + 0.5 * fp + 0.5 * fn
    pq = iou_sum / denom if denom else 0.0
    sq = iou_sum / tp if tp else 0.0
    rq = tp / denom if denom else 0.0
    return pq, sq, rq, tp, fp, fn


def counting_miou(pred, gt):
    p = np.concatenate([np.ravel(x) for x in pred])
    g = np.concatenate([np.ravel(x) for x in gt])
    keep = g != UNKNOWN
    p, g = p[keep], g[keep]
    ious = {}
    for c in sorted(set(g.tolist())):
        inter = sum(1 for a, b in zip(p, g) if a == c and b == c)
        union = sum(1 for a, b in zip(p, g) if a == c or b == c)
        ious[c] = inter / union
    return sum(ious.values()) / len(ious), ious


def brute_force_assignment(cost):
    """Minimum total over every injection of the smaller side into the larger.

    Totals are correctly rounded (``math.fsum``) so they do not depend on
    summation order.
    """
    c = np.asarray(cost, dtype=float)
    rows, cols = c.shape
    if rows <= cols:
        return min(math.fsum(c[r, p[r]] for r in range(rows)) for p in itertools.permutations(range(cols), rows))
    return min(math.fsum(c[p[k], k] for k in range(cols)) for p in itertools.permutations(range(rows), cols))


def sweep_area(points_xy, step=1e-4):
    """Smallest bounding-rectangle area over a yaw grid on [0, pi/2)."""
    hull = np.asarray(points_xy, float)
    angles = np.arange(0, math.pi / 2, step)
    c, s = np.cos(angles), np.sin(angles)
    a = hull[:, :1] * c + hull[:, 1:] * s
    b = -hull[:, :1] * s + hull[:, 1:] * c
    return float(((a.max(0) - a.min(0)) * (b.max(0) - b.min(0))).min())


def central_differences(f, x, h=1e-4):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


def relative_error(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)
