"""Mask-branch losses with analytic gradients.

``global_loss`` is the mean sigmoid binary cross-entropy over the global map;
``char_loss`` is the class-balanced softmax cross-entropy over the 37
character/background classes. Both return the loss value together with
d(loss)/d(logits).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

NUM_CLASSES = 37  # background + 36 characters


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.beta) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    value: float
    gradient: np.ndarray
    weights: np.ndarray | None = None


def _check_global(x, y):
    if x.shape != y.shape:
        raise ContractError(f"logits {x.shape} and target {y.shape} differ in shape")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("global targets must be 0 or 1")


def _global_values(x, y):
    # -[y log S(x) + (1-y) log(1-S(x))] == max(x,0) - x*y + log1p(exp(-|x|))
    per_cell = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    axes = tuple(range(x.ndim - y.ndim, x.ndim))
    return per_cell.sum(axis=axes) / y.size


def global_loss(logits, target) -> LossReport:
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    _check_global(x, y)
    value = float(_global_values(x, y))
    grad = (expit(x) - y) / x.size
    return LossReport(value, grad)


def _global_batch(batch, target):
    y = np.asarray(target, dtype=np.float64)
    return _global_values(np.asarray(batch, dtype=np.float64), y)


global_loss.batch_values = _global_batch


def char_weights(labels) -> np.ndarray:
    """Per-cell weights: 1 for background, N_neg / (N - N_neg) for characters.

    Cells labelled -1 get weight 0 and are left out of N and N_neg. With no
    background cells the character weight falls back to 1.
    """
    lab = np.asarray(labels)
    valid = lab >= 0
    n = int(np.count_nonzero(valid))
    n_neg = int(np.count_nonzero(lab == 0))
    n_pos = n - n_neg
    pos_weight = n_neg / n_pos if n_pos > 0 and n_neg > 0 else 1.0
    w = np.where(lab == 0, 1.0, pos_weight)
    return np.where(valid, w, 0.0)


def _check_char(x, lab):
    if x.ndim != 2 or x.shape[1] != NUM_CLASSES:
        raise ContractError(f"logits must be N x {NUM_CLASSES}, got {x.shape}")
    if lab.shape != (x.shape[0],):
        raise ContractError(f"labels shape {lab.shape} does not match {x.shape[0]} cells")
    if not np.issubdtype(lab.dtype, np.integer):
        if not np.all(np.equal(np.mod(lab, 1), 0)):
            raise ContractError("labels must be integers")
        lab = lab.astype(np.int64)
    if lab.size and (lab.min() < -1 or lab.max() >= NUM_CLASSES):
        raise ContractError(f"labels must lie in -1..{NUM_CLASSES - 1}")
    return lab


def _char_values(xv, lv, wv, n):
    """Loss over the valid cells ``xv`` (shape ``(..., n_valid, T)``)."""
    top = xv.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(xv - top).sum(axis=-1)) + top[..., 0]
    picked = xv[..., np.arange(len(lv)), lv]
    return ((lse - picked) * wv).sum(axis=-1) / n


def char_loss(logits, target_labels) -> LossReport:
    x = np.asarray(logits, dtype=np.float64)
    lab = _check_char(x, np.asarray(target_labels))
    weights = char_weights(lab)
    valid = lab >= 0
    n = int(np.count_nonzero(valid))
    grad = np.zeros_like(x)
    if n == 0:
        return LossReport(0.0, grad, weights)

    xv, lv, wv = x[valid], lab[valid], weights[valid]
    value = float(_char_values(xv, lv, wv, n))
    e = np.exp(xv - xv.max(axis=1, keepdims=True))
    g = e / e.sum(axis=1, keepdims=True)
    g[np.arange(len(lv)), lv] -= 1.0
    grad[valid] = g * (wv / n)[:, None]
    return LossReport(value, grad, weights)


def _char_batch(batch, target_labels):
    x = np.asarray(batch, dtype=np.float64)
    lab = np.asarray(target_labels).astype(np.int64)
    weights = char_weights(lab)
    valid = lab >= 0
    n = int(np.count_nonzero(valid))
    if n == 0:
        return np.zeros(x.shape[:-2])
    return _char_values(x[..., valid, :], lab[valid], weights[valid], n)


char_loss.batch_values = _char_batch


def _value(report_or_value) -> float:
    return report_or_value.value if isinstance(report_or_value, LossReport) else float(report_or_value)


def mask_loss(global_report, char_report, cfg: LossConfig = LossConfig()) -> float:
    return _value(global_report) + cfg.beta * _value(char_report)


def total_loss(l_rpn: float, l_rcnn: float, l_mask: float, cfg: LossConfig = LossConfig()) -> float:
    return float(l_rpn) + cfg.alpha1 * float(l_rcnn) + cfg.alpha2 * float(l_mask)


def numeric_gradient(
    loss_fn: Callable, logits, targets, step: float = 1e-3, chunk: int = 256
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(logits, targets).value``.

    Uses ``loss_fn.batch_values`` when available to evaluate many perturbed
    copies at once.
    """
    x = np.array(logits, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros(flat.size)
    batched = getattr(loss_fn, "batch_values", None)
    if batched is None:
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn(x, targets).value
            flat[k] = orig - step
            down = loss_fn(x, targets).value
            flat[k] = orig
            grad[k] = (up - down) / (2 * step)
        return grad.reshape(x.shape)
    for start in range(0, flat.size, chunk):
        idx = np.arange(start, min(start + chunk, flat.size))
        plus = np.repeat(flat[None, :], len(idx), axis=0)
        minus = plus.copy()
        plus[np.arange(len(idx)), idx] += step
        minus[np.arange(len(idx)), idx] -= step
        up = batched(plus.reshape((len(idx),) + x.shape), targets)
        down = batched(minus.reshape((len(idx),) + x.shape), targets)
        grad[idx] = (up - down) / (2 * step)
    return grad.reshape(x.shape)


def gradient_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max relative error, falling back to absolute error where |analytic| < floor."""
    a = np.asarray(analytic, dtype=np.float64)
    g = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - g)
    scale = np.maximum(np.abs(a), np.abs(g))
    err = np.where(np.abs(a) < floor, diff, diff / np.where(scale > 0, scale, 1.0))
    return float(err.max()) if err.size else 0.0


def finite_diff_check(loss_fn: Callable, logits, targets, step: float = 1e-3) -> float:
    analytic = loss_fn(logits, targets).gradient
    return gradient_error(analytic, numeric_gradient(loss_fn, logits, targets, step))
