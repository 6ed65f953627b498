"""Training objective: per-term losses, their gradients, and the weighted total.

All losses return plain floats and are >= 0, reaching 0 exactly at a
(clamped) perfect prediction.  Each has an analytic gradient companion so
the whole objective is verifiable against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

CLAMP_EPS = 1e-7


def _clamped(pred: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(pred, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)


@dataclass(frozen=True)
class LossReport:
    l_seg: float
    l_det: float
    l_cls: float
    l_reg: float
    total: float
    l_offset: float | None = None


def focal_loss(pred: np.ndarray, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> float:
    """Penalty-reduced focal loss over a Gaussian-target heatmap.

    Cells with target exactly 1 are positives; elsewhere the (1-y)^beta
    factor down-weights the penalty near peaks.  Normalized by the positive
    count (floor 1).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = _clamped(pred)
    pos = target == 1.0
    n = max(1, int(pos.sum()))
    pos_term = ((1.0 - p) ** alpha * np.log(p))[pos].sum()
    neg_term = ((1.0 - target) ** beta * p**alpha * np.log(1.0 - p))[~pos].sum()
    return float(-(pos_term + neg_term) / n)


def focal_loss_grad(pred: np.ndarray, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = _clamped(pred)
    pos = target == 1.0
    n = max(1, int(pos.sum()))
    grad = np.zeros_like(p)
    gp = alpha * (1.0 - p) ** (alpha - 1.0) * np.log(p) - (1.0 - p) ** alpha / p
    gn = (1.0 - target) ** beta * (p**alpha / (1.0 - p) - alpha * p ** (alpha - 1.0) * np.log(1.0 - p))
    grad[pos] = gp[pos]
    grad[~pos] = gn[~pos]
    grad /= n
    # Clamped coordinates are flat.
    grad[(pred <= CLAMP_EPS) | (pred >= 1.0 - CLAMP_EPS)] = 0.0
    return grad


def cross_entropy_loss(probs: np.ndarray, true_class: int) -> float:
    """Negative log-likelihood of the true class under a simplex vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_class < probs.shape[-1]:
        raise ValidationError(f"true_class {true_class} out of range for {probs.shape[-1]} classes")
    return float(-np.log(np.clip(probs[true_class], CLAMP_EPS, 1.0)))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy_from_logits(logits: np.ndarray, true_class: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy with its gradient w.r.t. the logits (p - onehot)."""
    p = softmax(logits)
    loss = cross_entropy_loss(p, true_class)
    grad = p.copy()
    grad[true_class] -= 1.0
    return loss, grad


def smooth_l1_loss(pred, target) -> float:
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    per = np.where(np.abs(e) < 1.0, 0.5 * e * e, np.abs(e) - 0.5)
    return float(per.sum())


def smooth_l1_grad(pred, target) -> np.ndarray:
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.where(np.abs(e) < 1.0, e, np.sign(e))


def seg_loss(pred_mask: np.ndarray, target_mask: np.ndarray) -> float:
    """Mean binary cross-entropy over pixels, predictions clamped."""
    pred_mask = np.asarray(pred_mask, dtype=np.float64)
    target_mask = np.asarray(target_mask, dtype=np.float64)
    if pred_mask.shape != target_mask.shape:
        raise ValidationError(f"shape mismatch: pred {pred_mask.shape} vs target {target_mask.shape}")
    p = _clamped(pred_mask)
    ll = target_mask * np.log(p) + (1.0 - target_mask) * np.log(1.0 - p)
    return float(-ll.mean())


def seg_loss_grad(pred_mask: np.ndarray, target_mask: np.ndarray) -> np.ndarray:
    pred_mask = np.asarray(pred_mask, dtype=np.float64)
    target_mask = np.asarray(target_mask, dtype=np.float64)
    p = _clamped(pred_mask)
    grad = (-target_mask / p + (1.0 - target_mask) / (1.0 - p)) / p.size
    grad[(pred_mask <= CLAMP_EPS) | (pred_mask >= 1.0 - CLAMP_EPS)] = 0.0
    return grad


def total_loss(
    l_seg: float,
    l_det: float,
    l_cls: float,
    l_reg: float,
    lambda1: float = 0.1,
    lambda2: float = 0.01,
    l_offset: float | None = None,
) -> LossReport:
    """Weighted objective: l_seg + l_det + lambda1*l_cls + lambda2*l_reg (+ offset)."""
    for name, v in (("l_seg", l_seg), ("l_det", l_det), ("l_cls", l_cls), ("l_reg", l_reg)):
        if v < 0:
            raise ValidationError(f"{name} must be >= 0, got {v}")
    total = l_seg + l_det + lambda1 * l_cls + lambda2 * l_reg
    if l_offset is not None:
        if l_offset < 0:
            raise ValidationError(f"l_offset must be >= 0, got {l_offset}")
        total += l_offset
    return LossReport(l_seg, l_det, l_cls, l_reg, total, l_offset)


def grad_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    loss_fn maps a flat float vector to (value, gradient).  The error per
    coordinate is |g_a - g_n| / max(1, |g_a|, |g_n|).
    """
    x = np.asarray(point, dtype=np.float64).ravel().copy()
    _, analytic = loss_fn(x)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp, _ = loss_fn(xp)
        fm, _ = loss_fn(xm)
        numeric = (fp - fm) / (2.0 * h)
        denom = max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
