"""Soft-F1 surrogate loss and exact F1 scoring.

The training objective is ``1 - f1_soft`` where ``f1_soft`` replaces the
true/false positive counts of F1 with their soft versions computed from
sigmoid outputs:

    tp_soft = sum_i y_i * yhat_i
    fp_soft = sum_i (1 - y_i) * yhat_i
    f1_soft = 2 * tp_soft / (pos_count + tp_soft + fp_soft + epsilon)

With hard predictions (yhat in {0, 1}) and at least one gold positive this
reduces exactly to the usual F1. The closed-form gradient keeps labels
constant and flows through the predictions only.

All functions accept ``y_hat`` with extra leading axes (for example a stack
of ensemble members sharing one batch); sums run over the trailing axes
that match ``y``, and outputs keep the leading axes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_EPSILON = 1e-8


@dataclass
class LossStats:
    """Soft counts and surrogate F1 for one batch."""

    tp_s: float
    fp_s: float
    pos_count: int
    f1_s: float
    epsilon: float


def _prepare(y, y_hat, mask):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_hat.ndim < y.ndim or y_hat.shape[y_hat.ndim - y.ndim:] != y.shape:
        raise ShapeError(
            f"prediction shape {y_hat.shape} does not end with label shape {y.shape}"
        )
    if np.any(y_hat < 0.0) or np.any(y_hat > 1.0):
        raise ValueError("predictions must lie in [0, 1]")
    if mask is None:
        mask = np.ones_like(y)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != y.shape:
            raise ShapeError(f"mask shape {mask.shape} != label shape {y.shape}")
    return y, y_hat, mask


def _sum_tokens(values, ndim):
    """Sum over the trailing ``ndim`` axes (the token grid)."""
    return values.sum(axis=tuple(range(-ndim, 0)))


def soft_counts(y, y_hat, mask=None):
    """Return ``(tp_s, fp_s, pos_count)`` over the unmasked tokens."""
    y, y_hat, mask = _prepare(y, y_hat, mask)
    ym = y * mask
    tp = _sum_tokens(ym * y_hat, y.ndim)
    fp = _sum_tokens((1.0 - y) * mask * y_hat, y.ndim)
    pos = _sum_tokens(ym, y.ndim)
    if tp.ndim == 0:
        return float(tp), float(fp), float(pos)
    return tp, fp, pos + np.zeros_like(tp)


def soft_f1(y, y_hat, mask=None, epsilon=DEFAULT_EPSILON, aggregate="batch"):
    """Surrogate F1 of a batch.

    ``aggregate="batch"`` pools the soft counts over every unmasked token
    before forming the ratio (one value per optimization step).
    ``aggregate="sentence"`` computes the ratio per row (axis -2 of ``y``)
    and averages, which is only meaningful for 2-D ``(batch, time)`` input.
    """
    if aggregate == "batch":
        tp, fp, pos = soft_counts(y, y_hat, mask)
        return 2.0 * tp / (pos + tp + fp + epsilon)
    if aggregate == "sentence":
        y, y_hat, mask = _prepare(y, y_hat, mask)
        if y.ndim < 2:
            raise ShapeError("sentence aggregation needs (batch, time) labels")
        ym = y * mask
        tp = (ym * y_hat).sum(axis=-1)
        fp = ((1.0 - y) * mask * y_hat).sum(axis=-1)
        pos = ym.sum(axis=-1)
        per_sentence = 2.0 * tp / (pos + tp + fp + epsilon)
        return per_sentence.mean(axis=-1)
    raise ValueError(f"unknown aggregation {aggregate!r}")


def loss_stats(y, y_hat, mask=None, epsilon=DEFAULT_EPSILON):
    """Bundle the batch-level soft counts into a :class:`LossStats`."""
    tp, fp, pos = soft_counts(y, y_hat, mask)
    f1 = 2.0 * tp / (pos + tp + fp + epsilon)
    return LossStats(tp_s=tp, fp_s=fp, pos_count=pos, f1_s=f1, epsilon=epsilon)


def loss_and_grad(y, y_hat, mask=None, epsilon=DEFAULT_EPSILON, aggregate="batch"):
    """Loss ``1 - f1_soft`` and its gradient with respect to ``y_hat``.

    With ``A = tp_s``, ``P = pos_count``, ``B = fp_s`` and the denominator
    ``D = P + A + B + epsilon`` the gradient of the surrogate is
    ``(2 y_i D - 2 A) / D^2`` per token; the loss gradient is its negation,
    zeroed at masked positions.
    """
    y, y_hat, mask = _prepare(y, y_hat, mask)
    lead = y_hat.ndim - y.ndim
    ym = y * mask
    if aggregate == "batch":
        tp = _sum_tokens(ym * y_hat, y.ndim)
        fp = _sum_tokens((1.0 - y) * mask * y_hat, y.ndim)
        pos = _sum_tokens(ym, y.ndim)
        denom = pos + tp + fp + epsilon
        f1 = 2.0 * tp / denom
        denom = np.reshape(denom, np.shape(denom) + (1,) * y.ndim)
        tp = np.reshape(tp, np.shape(tp) + (1,) * y.ndim)
        grad_f1 = (2.0 * y * denom - 2.0 * tp) / (denom * denom) * mask
        loss = 1.0 - f1
    elif aggregate == "sentence":
        if y.ndim < 2:
            raise ShapeError("sentence aggregation needs (batch, time) labels")
        n_rows = y.shape[-2]
        tp = (ym * y_hat).sum(axis=-1)
        fp = ((1.0 - y) * mask * y_hat).sum(axis=-1)
        pos = ym.sum(axis=-1)
        denom = pos + tp + fp + epsilon
        f1 = (2.0 * tp / denom).mean(axis=-1)
        grad_f1 = (2.0 * y * denom[..., None] - 2.0 * tp[..., None]) / (
            denom[..., None] ** 2
        ) * mask / n_rows
        loss = 1.0 - f1
    else:
        raise ValueError(f"unknown aggregation {aggregate!r}")
    if lead == 0 and grad_f1.shape != y_hat.shape:
        grad_f1 = np.broadcast_to(grad_f1, y_hat.shape).copy()
    if np.ndim(loss) == 0:
        loss = float(loss)
    return loss, -grad_f1


def exact_f1(y_true, y_pred, mask=None):
    """Token-level precision, recall and F1 for hard label vectors.

    Degenerate conventions: with no predicted positives, precision is 0
    unless there are also no gold positives, in which case P = R = F1 = 1;
    with gold positives absent but predictions present, recall is 0.
    F1 is 0 whenever P + R = 0.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(y_true)
    else:
        mask = np.asarray(mask, dtype=np.float64)
    ndim = y_true.ndim
    tp = _sum_tokens(y_true * y_pred * mask, ndim)
    pred_pos = _sum_tokens(y_pred * mask, ndim)
    gold_pos = _sum_tokens(y_true * mask, ndim) + np.zeros_like(tp)
    both_empty = (pred_pos == 0) & (gold_pos == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_pos > 0, tp / np.where(pred_pos > 0, pred_pos, 1.0), 0.0)
        recall = np.where(gold_pos > 0, tp / np.where(gold_pos > 0, gold_pos, 1.0), 0.0)
    precision = np.where(both_empty, 1.0, precision)
    recall = np.where(both_empty, 1.0, recall)
    pr = precision + recall
    f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    if np.ndim(tp) == 0:
        return float(precision), float(recall), float(f1)
    return precision, recall, f1
