import csv
import math

import numpy as np
import pytest

from ranksemi.weighting import (WeightingError, effectiveness_weight,
                                importance_score_weights, write_ew_audit)


def test_isw_two_point_example():
    w = importance_score_weights(np.array([1.0, 0.0]))
    np.testing.assert_allclose(w, [0.7311, 0.2689], atol=5e-5)


def test_isw_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 12))
        w = importance_score_weights(rng.random(k))
        np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)
        assert (w > 0).all()


def test_isw_orders_by_score():
    w = importance_score_weights(np.array([0.9, 0.1, 0.5]))
    assert w[0] > w[2] > w[1]


def test_isw_overflow_safe():
    w = importance_score_weights(np.array([1000.0, 0.0]))
    assert np.isfinite(w).all()
    np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)


def test_ew_two_point_example():
    eps = effectiveness_weight(np.array([0.75, 0.25]))
    expected = 1.0 - (-(0.75 * math.log(0.75) + 0.25 * math.log(0.25))) / math.log(2)
    np.testing.assert_allclose(eps, expected, atol=1e-12)
    np.testing.assert_allclose(eps, 0.1887, atol=5e-5)


def test_ew_uniform_scores_give_zero():
    np.testing.assert_allclose(effectiveness_weight(np.full(8, 0.3)), 0.0, atol=1e-12)


def test_ew_one_hot_gives_one():
    np.testing.assert_allclose(effectiveness_weight(np.array([1.0, 0.0, 0.0, 0.0])),
                               1.0, atol=1e-12)


def test_ew_scale_invariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        z = rng.random(int(rng.integers(2, 10))) + 1e-3
        np.testing.assert_allclose(effectiveness_weight(z),
                                   effectiveness_weight(z * 123.4), atol=1e-9)


def test_ew_bounds():
    rng = np.random.default_rng(2)
    for _ in range(500):
        z = rng.random(int(rng.integers(2, 10)))
        eps = effectiveness_weight(z)
        assert 0.0 <= eps <= 1.0


def test_ew_rejects_negative_scores():
    with pytest.raises(WeightingError):
        effectiveness_weight(np.array([0.4, -0.1]))


def test_ew_audit_rows(tmp_path):
    rows = [("u0", 0.5, True), ("u1", 0.9, False), ("u2", 0.1, None)]
    path = tmp_path / "ew.csv"
    write_ew_audit(rows, path)
    with open(path, newline="") as fh:
        back = list(csv.DictReader(fh))
    assert [r["image_id"] for r in back] == ["u0", "u1", "u2"]
    assert back[2]["is_noise"] == ""
