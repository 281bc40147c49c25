import math

import numpy as np
import pytest

from ranksemi.core import EventImage, PersonInstance
from ranksemi.loss import (LossError, labelled_loss, labelled_loss_grad,
                           lambda_schedule, learning_rate, sample_labelled,
                           teacher_loss_grad, total_loss, unlabelled_loss,
                           unlabelled_loss_grad)


def _probs(rows):
    return np.asarray(rows, dtype=np.float64)


def test_cross_entropy_uniform_rows():
    probs = _probs([[0.5, 0.5]] * 4)
    labels = np.array([1, 0, 0, 1])
    np.testing.assert_allclose(labelled_loss(probs, labels), math.log(2), atol=1e-12)


def test_cross_entropy_single_sample():
    probs = _probs([[0.75, 0.25]])
    np.testing.assert_allclose(labelled_loss(probs, np.array([1])),
                               -math.log(0.25), atol=1e-12)
    np.testing.assert_allclose(labelled_loss(probs, np.array([1])), 1.3863, atol=5e-5)


def test_cross_entropy_perfect_predictions():
    probs = _probs([[0.0, 1.0], [1.0, 0.0]])
    labels = np.array([1, 0])
    assert labelled_loss(probs, labels) < 1e-10


def test_cross_entropy_grad_matches_value():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 9))
        raw = rng.random((k, 2)) + 1e-3
        probs = raw / raw.sum(axis=1, keepdims=True)
        labels = (rng.random(k) < 0.3).astype(np.int64)
        value, dprobs = labelled_loss_grad(probs, labels)
        np.testing.assert_allclose(value, labelled_loss(probs, labels), atol=1e-12)
        step = 1e-7
        for j in range(k):
            col = labels[j]
            bumped = probs.copy()
            bumped[j, col] += step
            fd = (labelled_loss(bumped, labels) - value) / step
            np.testing.assert_allclose(dprobs[j, col], fd, rtol=1e-4)


def test_unlabelled_loss_example():
    probs = _probs([[0.5, 0.5], [0.5, 0.5]])
    pseudo = np.array([1, 0])
    w = np.array([0.5, 0.5])
    np.testing.assert_allclose(unlabelled_loss(probs, pseudo, w, 1.0), 0.5, atol=1e-12)


def test_unlabelled_loss_zero_at_one_hot_targets():
    probs = _probs([[0.0, 1.0], [1.0, 0.0]])
    pseudo = np.array([1, 0])
    w = np.array([0.3, 0.7])
    np.testing.assert_allclose(unlabelled_loss(probs, pseudo, w, 1.0), 0.0, atol=1e-12)


def test_unlabelled_loss_scales_with_epsilon():
    rng = np.random.default_rng(1)
    raw = rng.random((4, 2)) + 1e-3
    probs = raw / raw.sum(axis=1, keepdims=True)
    pseudo = np.array([1, 0, 0, 0])
    w = importance = np.full(4, 0.25)
    full = unlabelled_loss(probs, pseudo, w, 1.0)
    np.testing.assert_allclose(unlabelled_loss(probs, pseudo, w, 0.25), 0.25 * full,
                               atol=1e-12)
    np.testing.assert_allclose(unlabelled_loss(probs, pseudo, w, 0.0), 0.0, atol=1e-12)


def test_unlabelled_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(50):
        k = int(rng.integers(1, 9))
        raw = rng.random((k, 2)) + 1e-3
        probs = raw / raw.sum(axis=1, keepdims=True)
        pseudo = np.zeros(k, dtype=np.int64)
        pseudo[int(rng.integers(k))] = 1
        w = rng.random(k) + 1e-3
        w = w / w.sum()
        eps = float(rng.random())
        value, dprobs = unlabelled_loss_grad(probs, pseudo, w, eps)
        np.testing.assert_allclose(value, unlabelled_loss(probs, pseudo, w, eps),
                                   atol=1e-12)
        step = 1e-7
        j, col = int(rng.integers(k)), int(rng.integers(2))
        bumped = probs.copy()
        bumped[j, col] += step
        fd = (unlabelled_loss(bumped, pseudo, w, eps) - value) / step
        np.testing.assert_allclose(dprobs[j, col], fd, rtol=1e-4, atol=1e-10)


def test_unlabelled_weights_must_normalize():
    probs = _probs([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(LossError):
        unlabelled_loss(probs, np.array([1, 0]), np.array([0.5, 0.4]), 1.0)


def test_teacher_grad_squared_distance():
    student = _probs([[1.0, 0.0]])
    teacher = _probs([[0.0, 1.0]])
    value, grad = teacher_loss_grad(student, teacher)
    np.testing.assert_allclose(value, 2.0, atol=1e-12)
    np.testing.assert_allclose(grad, [[2.0, -2.0]], atol=1e-12)


def test_teacher_grad_zero_when_identical():
    rows = _probs([[0.3, 0.7], [0.8, 0.2]])
    value, grad = teacher_loss_grad(rows, rows.copy())
    np.testing.assert_allclose(value, 0.0, atol=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_lambda_schedule():
    np.testing.assert_allclose(lambda_schedule(0, 35, 1.0), 0.0, atol=1e-12)
    np.testing.assert_allclose(lambda_schedule(7, 35, 1.0), 0.2, atol=1e-12)
    np.testing.assert_allclose(lambda_schedule(35, 35, 1.0), 1.0, atol=1e-12)
    np.testing.assert_allclose(lambda_schedule(200, 35, 1.0), 1.0, atol=1e-12)
    np.testing.assert_allclose(lambda_schedule(7, 35, 0.5), 0.1, atol=1e-12)


def test_learning_rate_schedule():
    np.testing.assert_allclose(learning_rate(0, 0.001, 20, 0.5), 0.001, atol=1e-15)
    np.testing.assert_allclose(learning_rate(19, 0.001, 20, 0.5), 0.001, atol=1e-15)
    np.testing.assert_allclose(learning_rate(20, 0.001, 20, 0.5), 0.0005, atol=1e-15)
    np.testing.assert_allclose(learning_rate(40, 0.001, 20, 0.5), 0.00025, atol=1e-15)


def test_total_loss_composition():
    breakdown = total_loss([math.log(2)], [0.5], 1.0)
    np.testing.assert_allclose(breakdown.labelled_term, math.log(2), atol=1e-12)
    np.testing.assert_allclose(breakdown.unlabelled_term, 0.5, atol=1e-12)
    np.testing.assert_allclose(breakdown.total, 1.1931, atol=5e-5)


def test_total_loss_epsilon_zero_images():
    # unlabelled images with eps = 0 contribute exactly nothing for any lambda
    for lam in (0.0, 0.3, 1.0):
        breakdown = total_loss([0.7, 0.3], [0.0, 0.0], lam)
        np.testing.assert_allclose(breakdown.total, breakdown.labelled_term,
                                   atol=1e-12)


def test_sample_labelled_contains_all_important():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        labels = np.zeros(n, dtype=np.int64)
        labels[: int(rng.integers(1, min(n, 4)))] = 1
        order = rng.permutation(n)
        labels = labels[order]
        persons = tuple(PersonInstance(rng.normal(size=3), int(lab))
                        for lab in labels)
        image = EventImage("l0", True, persons)
        idx = sample_labelled(image, 8, rng)
        assert len(idx) == 8
        important = set(np.flatnonzero(labels).tolist())
        assert important <= set(idx.tolist())
