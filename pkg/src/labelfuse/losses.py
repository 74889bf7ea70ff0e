"""Cross-entropy supervision terms with analytic gradients w.r.t. the logits.

Every function returns ``(value, grad)`` with ``grad`` shaped like the logits.
Logits are ``(rows, C)`` or, for per-pixel losses, ``(H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .raster_io import NUM_CLASSES, UNKNOWN, LabelRaster


@dataclass(frozen=True)
class LossConfig:
    num_classes: int = NUM_CLASSES
    lambda_sem: float = 0.2
    lambda_ins: float = 0.2
    instance_weight_mode: str = "sum"


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _rows(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=float)
    if x.ndim < 2:
        raise InvalidInputError("logits need a trailing class axis")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("logits must be finite")
    return x.reshape(-1, x.shape[-1])


def _labels(target) -> np.ndarray:
    if isinstance(target, LabelRaster):
        target = target.labels
    return np.asarray(target).reshape(-1).astype(np.int64)


def _check_range(labels, n_classes):
    known = labels[labels != UNKNOWN]
    if np.any(known >= n_classes) or np.any(known < 0):
        raise InvalidInputError(f"target label outside [0, {n_classes})")


def _index_ce(labels: np.ndarray, x: np.ndarray, denom: float):
    """Mean one-hot cross entropy over rows whose label is known."""
    _check_range(labels, x.shape[1])
    grad = np.zeros_like(x)
    known = labels != UNKNOWN
    if not known.any() or denom == 0:
        return 0.0, grad
    logp = log_softmax(x[known])
    rows = np.arange(len(logp))
    t = labels[known]
    value = -float(np.sum(logp[rows, t])) / denom
    g = np.exp(logp)
    g[rows, t] -= 1.0
    grad[known] = g / denom
    return value, grad


def cluster_loss(anchor_labels, gaussian_logits):
    """Cross entropy tying each anchor's k Gaussians to the anchor's voted label.

    ``gaussian_logits`` rows are grouped anchor by anchor, k consecutive rows
    per anchor.
    """
    labels = np.asarray(anchor_labels).reshape(-1).astype(np.int64)
    x = _rows(gaussian_logits)
    if len(labels) == 0:
        return 0.0, np.zeros_like(x).reshape(np.shape(gaussian_logits))
    if len(x) % len(labels):
        raise InvalidInputError("logit rows must be a multiple of the anchor count")
    if np.any(labels == UNKNOWN):
        raise InvalidInputError("anchor labels must be known")
    k = len(x) // len(labels)
    per_row = np.repeat(labels, k)
    value, grad = _index_ce(per_row, x, len(x))
    return value, grad.reshape(np.shape(gaussian_logits))


def semantic_loss(target, logits):
    """Mean per-pixel cross entropy against ``target``; UNKNOWN pixels are skipped."""
    labels = _labels(target)
    x = _rows(logits)
    if len(labels) != len(x):
        raise InvalidInputError("target and logits cover different pixel counts")
    value, grad = _index_ce(labels, x, int((labels != UNKNOWN).sum()))
    return value, grad.reshape(np.shape(logits))


def instance_loss(m2f_matched, match_consistent, logits, weight_mode: str = "sum"):
    """Cross entropy against the sum of two one-hot instance targets.

    Where both sources are known and agree the class weight is 2 (``sum``
    mode) or 1 (``mean`` mode); an UNKNOWN source contributes nothing.  The
    mean runs over all pixels.
    """
    a = _labels(m2f_matched)
    b = _labels(match_consistent)
    x = _rows(logits)
    if not (len(a) == len(b) == len(x)):
        raise InvalidInputError("instance targets and logits cover different pixel counts")
    if weight_mode not in ("sum", "mean"):
        raise InvalidInputError(f"weight_mode must be 'sum' or 'mean', got {weight_mode!r}")
    _check_range(a, x.shape[1])
    _check_range(b, x.shape[1])
    n = len(x)
    grad = np.zeros_like(x)
    if n == 0:
        return 0.0, grad.reshape(np.shape(logits))
    ka, kb = a != UNKNOWN, b != UNKNOWN
    w = np.zeros_like(x)
    rows = np.arange(n)
    w[rows[ka], a[ka]] += 1.0
    w[rows[kb], b[kb]] += 1.0
    if weight_mode == "mean":
        sources = ka.astype(float) + kb
        w /= np.maximum(sources, 1.0)[:, None]
    active = ka | kb
    if not active.any():
        return 0.0, grad.reshape(np.shape(logits))
    logp = log_softmax(x[active])
    wa = w[active]
    value = -float(np.sum(wa * logp)) / n
    grad[active] = (wa.sum(1, keepdims=True) * np.exp(logp) - wa) / n
    return value, grad.reshape(np.shape(logits))


def weighted_total(sem_value: float, ins_value: float, cfg: LossConfig = LossConfig()) -> float:
    """Semantic and instance terms of the training objective, weighted."""
    return cfg.lambda_sem * sem_value + cfg.lambda_ins * ins_value
