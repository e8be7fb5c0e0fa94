"""Tests for the soft-F1 surrogate loss and exact token-level F1."""

import numpy as np
import pytest

from kprl import loss
from kprl.errors import ShapeError


def test_soft_counts_worked_example():
    y = np.array([1.0, 0.0, 1.0])
    y_hat = np.array([1.0, 0.0, 0.0])
    tp, fp, pos = loss.soft_counts(y, y_hat)
    assert tp == 1.0
    assert fp == 0.0
    assert pos == 2.0


def test_soft_f1_worked_example():
    # tp_s=1, fp_s=0, |Y+|=2 -> f1 = 2*1/(2+1+0) = 2/3
    y = np.array([1.0, 0.0, 1.0])
    y_hat = np.array([1.0, 0.0, 0.0])
    f1 = loss.soft_f1(y, y_hat, epsilon=0.0)
    np.testing.assert_allclose(f1, 2.0 / 3.0, rtol=1e-15)
    value, grad = loss.loss_and_grad(y, y_hat, epsilon=0.0)
    np.testing.assert_allclose(value, 1.0 / 3.0, rtol=1e-15)
    # d(loss)/dy_hat = -(2*y*D - 2*A)/D^2 with A=1, D=3
    np.testing.assert_allclose(grad, [-4.0 / 9.0, 2.0 / 9.0, -4.0 / 9.0], rtol=1e-15)


def test_perfect_prediction_loss_vanishes():
    y = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    value, _ = loss.loss_and_grad(y, y.copy())
    assert 0.0 <= value < 1e-8


def test_no_gold_positives_gives_max_loss():
    y = np.zeros(5)
    y_hat = np.full(5, 0.3)
    value, grad = loss.loss_and_grad(y, y_hat)
    assert value == 1.0
    np.testing.assert_array_equal(grad, np.zeros(5))


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(5):
        y = (rng.random((3, 6)) < 0.4).astype(float)
        y[0, 0] = 1.0  # keep at least one gold positive
        y_hat = rng.uniform(0.05, 0.95, size=(3, 6))
        mask = np.ones((3, 6))
        mask[1, 4:] = 0.0
        mask[2, 2:] = 0.0
        for aggregate in ("batch", "sentence"):
            _, grad = loss.loss_and_grad(y, y_hat, mask, aggregate=aggregate)
            h = 1e-6
            numeric = np.zeros_like(y_hat)
            for idx in np.ndindex(*y_hat.shape):
                up = y_hat.copy()
                up[idx] += h
                down = y_hat.copy()
                down[idx] -= h
                lu, _ = loss.loss_and_grad(y, up, mask, aggregate=aggregate)
                ld, _ = loss.loss_and_grad(y, down, mask, aggregate=aggregate)
                numeric[idx] = (lu - ld) / (2 * h)
            np.testing.assert_allclose(grad, numeric, atol=1e-8)


def test_masked_positions_do_not_influence_loss():
    rng = np.random.default_rng(11)
    y = (rng.random((2, 5)) < 0.5).astype(float)
    y[0, 0] = 1.0
    y_hat = rng.uniform(0.1, 0.9, size=(2, 5))
    mask = np.ones((2, 5))
    mask[:, 3:] = 0.0
    base, grad = loss.loss_and_grad(y, y_hat, mask)
    assert np.all(grad[:, 3:] == 0.0)
    tampered = y_hat.copy()
    tampered[:, 3:] = rng.uniform(0.0, 1.0, size=(2, 2))
    value, grad2 = loss.loss_and_grad(y, tampered, mask)
    assert value == base
    np.testing.assert_array_equal(grad[:, :3], grad2[:, :3])


def test_sentence_aggregate_against_per_row_computation():
    rng = np.random.default_rng(3)
    y = (rng.random((4, 7)) < 0.4).astype(float)
    y_hat = rng.uniform(0.0, 1.0, size=(4, 7))
    eps = 1e-8
    expected = []
    for r in range(4):
        tp = float(np.sum(y[r] * y_hat[r]))
        fp = float(np.sum((1 - y[r]) * y_hat[r]))
        pos = float(np.sum(y[r]))
        expected.append(2 * tp / (pos + tp + fp + eps))
    got = loss.soft_f1(y, y_hat, aggregate="sentence")
    np.testing.assert_allclose(got, np.mean(expected), rtol=1e-12)
    # batch aggregation pools counts first, so the two generally differ
    pooled = loss.soft_f1(y, y_hat, aggregate="batch")
    assert abs(pooled - got) > 1e-6


def test_stacked_predictions_broadcast_per_model():
    rng = np.random.default_rng(19)
    y = (rng.random((3, 4)) < 0.5).astype(float)
    y[0, 0] = 1.0
    stack = rng.uniform(0.05, 0.95, size=(5, 3, 4))
    mask = np.ones((3, 4))
    mask[2, 1:] = 0.0
    values, grads = loss.loss_and_grad(y, stack, mask)
    assert values.shape == (5,)
    assert grads.shape == stack.shape
    for s in range(5):
        v, g = loss.loss_and_grad(y, stack[s], mask)
        np.testing.assert_allclose(values[s], v, rtol=1e-15)
        np.testing.assert_allclose(grads[s], g, rtol=1e-15)


def test_loss_stats_bundle():
    y = np.array([1.0, 0.0, 1.0])
    y_hat = np.array([0.5, 0.5, 0.5])
    stats = loss.loss_stats(y, y_hat, epsilon=0.0)
    assert stats.tp_s == 1.0
    assert stats.fp_s == 0.5
    assert stats.pos_count == 2.0
    np.testing.assert_allclose(stats.f1_s, 2.0 / 3.5)


def test_exact_f1_hand_cases():
    p, r, f1 = loss.exact_f1([1, 1, 0, 0], [1, 0, 1, 0])
    assert (p, r, f1) == (0.5, 0.5, 0.5)
    # empty/empty counts as perfect agreement
    assert loss.exact_f1([0, 0], [0, 0]) == (1.0, 1.0, 1.0)
    # gold positives with no predictions
    assert loss.exact_f1([1, 1], [0, 0]) == (0.0, 0.0, 0.0)
    # predictions with no gold positives
    assert loss.exact_f1([0, 0], [1, 1]) == (0.0, 0.0, 0.0)


def test_exact_f1_respects_mask_and_broadcasts():
    y = np.array([[1, 0, 1], [0, 1, 0]], dtype=float)
    pred = np.array([[1, 0, 0], [0, 1, 1]], dtype=float)
    mask = np.array([[1, 1, 0], [1, 1, 0]], dtype=float)
    p, r, f1 = loss.exact_f1(y, pred, mask)
    assert (p, r, f1) == (1.0, 1.0, 1.0)
    stacked = np.stack([pred, y])
    p2, _, f2 = loss.exact_f1(y, stacked, np.ones_like(y))
    assert p2.shape == (2,)
    assert f2[1] == 1.0


def test_input_validation():
    with pytest.raises(ValueError):
        loss.soft_f1([1.0, 0.0], [1.2, 0.0])
    with pytest.raises(ShapeError):
        loss.soft_f1([1.0, 0.0], [1.0])
    with pytest.raises(ShapeError):
        loss.soft_f1([1.0, 0.0], [1.0, 0.0], mask=[1.0])
    with pytest.raises(ValueError):
        loss.soft_f1([1.0, 0.0], [1.0, 0.0], aggregate="tokens")
