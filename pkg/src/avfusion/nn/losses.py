"""Losses used for fusion training, each returning (value, gradient)."""

from __future__ import annotations

import numpy as np


def ce_loss(log_post: np.ndarray, targets: np.ndarray,
            mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Frame-average cross entropy of log-posteriors against state targets.

    L = -(1/T) sum_t log p(s*_t); the gradient w.r.t. the log-posteriors is
    -1/T at each (frame, target) entry and zero elsewhere. With a mask only
    valid frames count and T is the number of valid frames in the batch.
    """
    lp = np.asarray(log_post, dtype=np.float64)
    tgt = np.asarray(targets)
    squeeze = lp.ndim == 2
    if squeeze:
        lp = lp[None]
        tgt = tgt[None]
        if mask is not None:
            mask = np.asarray(mask)[None]
    bsz, t_len, n_states = lp.shape
    if tgt.shape != (bsz, t_len):
        raise ValueError(f"targets shape {tgt.shape} does not match "
                         f"log-posterior frames {(bsz, t_len)}")
    if tgt.min() < 0 or tgt.max() >= n_states:
        raise ValueError(f"target index out of range for {n_states} states")
    if mask is None:
        mask = np.ones((bsz, t_len))
    valid = float(mask.sum())
    if valid <= 0:
        raise ValueError("no valid frames in batch")
    b_idx, t_idx = np.meshgrid(np.arange(bsz), np.arange(t_len), indexing="ij")
    picked = lp[b_idx, t_idx, tgt] * mask
    loss = -picked.sum() / valid
    grad = np.zeros_like(lp)
    grad[b_idx, t_idx, tgt] = -mask / valid
    return loss, (grad[0] if squeeze else grad)


def mse_loss(pred: np.ndarray, target: np.ndarray,
             mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean squared element difference; gradient is 2(pred-target)/N."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    diff = p - t
    if mask is None:
        n = diff.size
    else:
        m = np.asarray(mask, dtype=np.float64)
        diff = diff * m[..., None]
        n = float(m.sum()) * p.shape[-1]
    if n <= 0:
        raise ValueError("no valid entries")
    return float((diff ** 2).sum() / n), 2.0 * diff / n
