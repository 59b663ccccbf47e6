"""Cross-entropy, label smoothing, and the weighted human/pseudo loss combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .model import log_softmax, softmax


@dataclass(frozen=True)
class SmoothingSpec:
    """Label-smoothing factors for human-labeled and pseudo-labeled targets."""

    beta_human: float = 0.0
    beta_pseudo: float = 0.0

    def __post_init__(self):
        check_beta(self.beta_human)
        check_beta(self.beta_pseudo)


def check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ConfigError(f"smoothing factor must be in [0, 1), got {beta}")


def smooth_labels(class_index, num_classes: int, beta: float) -> np.ndarray:
    """(1 - beta) * one_hot(i) + beta / K.

    ``class_index`` may be an int or an integer array; the class axis is appended last.
    """
    check_beta(beta)
    idx = np.asarray(class_index)
    if np.any(idx < 0) or np.any(idx >= num_classes):
        raise ConfigError(f"class index out of range for K={num_classes}")
    target = np.full(idx.shape + (num_classes,), beta / num_classes)
    np.put_along_axis(target, idx[..., None], (1.0 - beta) + beta / num_classes, axis=-1)
    return target


def cross_entropy(p: np.ndarray, target: np.ndarray) -> np.ndarray:
    """-sum_i target_i log p_i over the last axis."""
    return -np.sum(target * np.log(p), axis=-1)


def entropy(target: np.ndarray) -> np.ndarray:
    t = np.asarray(target)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
    return -terms.sum(-1)


def cross_entropy_from_logits(logits: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fused softmax + cross-entropy: per-position loss and d(loss)/d(logits)."""
    loss = -np.sum(target * log_softmax(logits), axis=-1)
    grad = softmax(logits) * target.sum(-1, keepdims=True) - target
    return loss, grad


def combined_st_loss(human_losses: Sequence[float], pseudo_losses: Sequence[float], alpha: float,
                     reduction: str = "sum") -> float:
    """Human loss plus ``alpha`` times pseudo loss.

    ``reduction="sum"`` adds raw per-example losses. ``"mean"`` first divides
    each source by its own count, which keeps ``alpha`` independent of how
    many examples each source contributes; an empty source contributes 0.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    h = np.asarray(human_losses, dtype=float)
    s = np.asarray(pseudo_losses, dtype=float)
    if reduction == "sum":
        return float(h.sum() + alpha * s.sum())
    if reduction == "mean":
        hm = h.mean() if h.size else 0.0
        sm = s.mean() if s.size else 0.0
        return float(hm + alpha * sm)
    raise ConfigError(f"unknown reduction {reduction!r}")


def batch_loss(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray, beta: float,
               weight: float = 1.0) -> tuple[float, np.ndarray, int]:
    """Mean smoothed cross-entropy over masked word positions, times ``weight``.

    Returns (loss, d(loss)/d(logits), number of target positions). Positions
    outside ``mask`` get zero loss and zero gradient.
    """
    K = logits.shape[-1]
    n = int(mask.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits), 0
    target = smooth_labels(np.where(mask, labels, 0), K, beta)
    per_pos, grad = cross_entropy_from_logits(logits, target)
    m = mask.astype(logits.dtype)
    loss = float((per_pos * m).sum()) / n * weight
    grad = grad * (m[..., None] * (weight / n))
    return loss, grad.astype(logits.dtype, copy=False), n
