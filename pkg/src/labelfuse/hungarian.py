"""Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3))."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def _solve_square(c: np.ndarray) -> np.ndarray:
    """Column assigned to each row of a square cost matrix."""
    n = c.shape[0]
    inf = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row, 1-based; 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            # reduced costs of row i0 against every free column
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[match[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while True:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[match[j] - 1] = j - 1
    return row_to_col


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-total-cost matching of a rectangular cost matrix.

    The matrix is padded to square with a constant strictly above every real
    entry; rows or columns matched to padding are left out of the result.
    Pairs come back sorted by row.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise InvalidInputError("cost matrix must be 2-D")
    rows, cols = c.shape
    if rows == 0 or cols == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix entries must be finite")
    n = max(rows, cols)
    pad = float(c.max()) + 1.0
    sq = np.full((n, n), pad)
    sq[:rows, :cols] = c
    row_to_col = _solve_square(sq)
    return [(r, int(row_to_col[r])) for r in range(rows) if row_to_col[r] < cols]


def assignment_cost(cost, pairs) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[r, k] for r, k in pairs))
