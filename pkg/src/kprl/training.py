"""Shared training machinery for all binary sequence models.

One call trains a whole ensemble: members are stacked along a leading
parameter axis and consume identical batches (the schedule is derived
from the first seed), so ensemble diversity comes purely from the random
initialization — which is also the only diversity the method calls for.
Each member keeps its own best-on-dev snapshot and its own early-stopping
clock; training stops when every member's patience is exhausted.
"""

from dataclasses import dataclass, field

import numpy as np

from . import loss as loss_mod
from . import nn_core
from .errors import ConfigError, NumericError


@dataclass
class TrainConfig:
    """Hyperparameters shared by subtask A and B models."""

    lr: float = 0.001
    batch_size: int = 32
    patience: int = 100
    max_epochs: int = 1000
    h1: int = 150
    h2: int = 32
    ensemble_size: int = 15
    clip_norm: float = 5.0
    epsilon: float = 1e-8
    aggregate: str = "batch"
    threshold: float = 0.5
    prune_sigma: float = 1.0
    join_threshold: float = 0.5
    weight_grid: tuple = (0.6, 0.8, 1.0, 1.2, 1.4)
    top_k: int = 7

    def validate(self):
        positive = {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "max_epochs": self.max_epochs,
            "h1": self.h1,
            "h2": self.h2,
            "ensemble_size": self.ensemble_size,
            "clip_norm": self.clip_norm,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0,1), got {self.threshold}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.aggregate not in ("batch", "sentence"):
            raise ConfigError(f"unknown aggregate {self.aggregate!r}")
        if not self.weight_grid or any(w <= 0 for w in self.weight_grid):
            raise ConfigError("weight grid entries must be positive")
        if self.top_k < 0:
            raise ConfigError("top_k must be nonnegative")
        return self


@dataclass
class TrainedMember:
    """One ensemble member after training: best-on-dev parameter snapshot."""

    params: nn_core.NetworkParams
    seed: int
    dev_f1: float
    epochs_trained: int  # epoch (1-based) at which the snapshot was taken


def pad_labels(labels_list, max_len):
    out = np.zeros((len(labels_list), max_len))
    for r, lab in enumerate(labels_list):
        out[r, : len(lab)] = lab
    return out


def _fixed_batches(features, labels, batch_size):
    """Deterministic contiguous batches (used for dev scoring)."""
    batches = []
    for i in range(0, len(features), batch_size):
        feats = features[i : i + batch_size]
        batch = nn_core.SequenceBatch.from_sequences(feats)
        batches.append((batch, pad_labels(labels[i : i + batch_size], batch.max_len)))
    return batches


def token_f1_scorer(dev_features, dev_labels, cfg):
    """Per-member token-level exact F1 on the dev set at the 0.5 threshold."""
    batches = _fixed_batches(dev_features, dev_labels, cfg.batch_size)

    def scorer(params, epoch):
        lead = params.stack_shape
        tp = np.zeros(lead)
        pred_pos = np.zeros(lead)
        gold_pos = 0.0
        for batch, labels in batches:
            y_hat = nn_core.network_forward(batch, params)
            pred = (y_hat >= cfg.threshold) * batch.mask
            tp += (pred * labels).sum(axis=(-2, -1))
            pred_pos += pred.sum(axis=(-2, -1))
            gold_pos += (labels * batch.mask).sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(pred_pos > 0, tp / np.where(pred_pos > 0, pred_pos, 1), 0.0)
            r = tp / gold_pos if gold_pos > 0 else np.ones(lead)
            pr = p + r
            f1 = np.where(pr > 0, 2 * p * r / np.where(pr > 0, pr, 1), 0.0)
        return np.atleast_1d(f1)

    return scorer


def fit_members(train_features, train_labels, seeds, cfg,
                dev_features=None, dev_labels=None, dev_scorer=None, log=None):
    """Train one stacked model per seed; return best-on-dev members.

    ``dev_scorer(params, epoch) -> per-member score array`` defaults to
    token-level exact F1 over ``dev_features``/``dev_labels``. ``log``
    receives one line per epoch.
    """
    cfg.validate()
    if not train_features:
        raise ConfigError("no training sentences")
    if len(train_features) != len(train_labels):
        raise ConfigError("features/labels length mismatch")
    if dev_scorer is None:
        if dev_features is None or dev_labels is None:
            raise ConfigError("need a dev set or an explicit dev scorer")
        dev_scorer = token_f1_scorer(dev_features, dev_labels, cfg)

    n = len(train_features)
    n_members = len(seeds)
    feature_dim = np.asarray(train_features[0]).shape[1]
    dims = nn_core.NetworkDims(feature_dim, cfg.h1, cfg.h2)
    params = nn_core.stack_params([nn_core.init_params(s, dims) for s in seeds])
    state = nn_core.AdamState.for_params(params, lr=cfg.lr)
    schedule = np.random.default_rng(seeds[0])

    best_f1 = np.full(n_members, -1.0)
    best_params = [None] * n_members
    best_epoch = np.zeros(n_members, dtype=int)
    stale = np.zeros(n_members, dtype=int)

    def loss_grad_fn(y, y_hat, mask):
        return loss_mod.loss_and_grad(
            y, y_hat, mask, epsilon=cfg.epsilon, aggregate=cfg.aggregate
        )

    for epoch in range(1, cfg.max_epochs + 1):
        order = schedule.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for i in range(0, n, cfg.batch_size):
            chunk = order[i : i + cfg.batch_size]
            batch = nn_core.SequenceBatch.from_sequences(
                [train_features[j] for j in chunk]
            )
            labels = pad_labels([train_labels[j] for j in chunk], batch.max_len)
            losses, _, grads = nn_core.forward_backward(
                batch, labels, params, loss_grad_fn
            )
            if not np.all(np.isfinite(losses)):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            nn_core.clip_global_norm(grads, cfg.clip_norm)
            nn_core.adam_step(params, grads, state)
            epoch_loss += float(np.mean(losses))
            n_batches += 1
        scores = np.asarray(dev_scorer(params, epoch), dtype=np.float64)
        improved = scores > best_f1
        for s in np.flatnonzero(improved):
            best_f1[s] = scores[s]
            best_params[s] = nn_core.param_slice(params, s)
            best_epoch[s] = epoch
        stale = np.where(improved, 0, stale + 1)
        if log is not None:
            log(
                f"epoch {epoch} loss {epoch_loss / max(n_batches, 1):.4f} "
                f"dev_f1 {np.max(scores):.4f} best {np.max(best_f1):.4f}"
            )
        if np.all(stale >= cfg.patience):
            break

    return [
        TrainedMember(
            params=best_params[s],
            seed=int(seeds[s]),
            dev_f1=float(best_f1[s]),
            epochs_trained=int(best_epoch[s]),
        )
        for s in range(n_members)
    ]
