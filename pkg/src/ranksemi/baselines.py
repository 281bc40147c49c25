"""Comparison baselines and pluggable score sources.

Three alternatives to ranking-based assignment, all operating on uniformly
sampled persons:

* Pseudo-Label (PL): threshold the model's own scores at 0.5 (strictly above
  -> important), so an image can easily receive zero positives.
* Mean Teacher (MT): an EMA copy of the student provides soft targets.
* Label Propagation (LP): spread the labelled batch's labels over a k-NN
  Gaussian affinity graph of encoder embeddings; a node's score is its
  propagated class-1 share.

The same three mechanisms can replace the softmax score source inside
the ranking pipeline (``score_source`` = softmax | MT | LP).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BaselineError(ValueError):
    """Invalid baseline state or parameters."""

SCORE_SOURCES = ("softmax", "MT", "LP")


def pl_labels(scores: np.ndarray) -> np.ndarray:
    """Hard pseudo-labels: 1 where score > 0.5, else 0 (ties -> 0)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] == 0:
        raise BaselineError("scores must be non-empty")
    if not np.all(np.isfinite(scores)):
        raise BaselineError("scores must be finite")
    return (scores > 0.5).astype(np.int64)


@dataclass
class TeacherState:
    """EMA copy of the student parameters."""

    theta: np.ndarray
    decay: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1).copy()
        if not (0.0 <= self.decay <= 1.0):
            raise BaselineError(f"EMA decay must be in [0, 1], got {self.decay}")


def ema_update(teacher: TeacherState, student_theta: np.ndarray) -> TeacherState:
    """In-place EMA: theta_t <- decay * theta_t + (1 - decay) * theta_s."""
    student_theta = np.asarray(student_theta, dtype=np.float64).reshape(-1)
    if student_theta.shape != teacher.theta.shape:
        raise BaselineError("student parameter length does not match the teacher")
    teacher.theta *= teacher.decay
    teacher.theta += (1.0 - teacher.decay) * student_theta
    return teacher


def mt_loss(student_probs: np.ndarray, teacher_probs: np.ndarray) -> float:
    """Mean over rows of the squared distance between student and teacher rows."""
    s = np.asarray(student_probs, dtype=np.float64)
    t = np.asarray(teacher_probs, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise BaselineError(f"student/teacher shapes differ: {s.shape} vs {t.shape}")
    return float(((s - t) ** 2).sum(axis=1).mean())


def uniform_person_sample(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """K person indices drawn uniformly: without replacement when n >= k,
    otherwise every person once plus uniform repeats."""
    if n < 1 or k < 1:
        raise BaselineError(f"need n >= 1 and k >= 1, got ({n}, {k})")
    if n >= k:
        return rng.choice(n, size=k, replace=False).astype(np.int64)
    extra = rng.choice(n, size=k - n, replace=True)
    return np.concatenate([np.arange(n), extra]).astype(np.int64)


def lp_scores(embeddings: np.ndarray, labels: np.ndarray, k_nn: int = 10,
              alpha: float = 0.99, iterations: int = 20) -> np.ndarray:
    """Label-propagation class-1 shares for the unlabelled nodes.

    ``labels`` holds 0/1 for known nodes and -1 for unknown ones. The graph is
    a symmetrized k-NN Gaussian affinity over the embeddings, bandwidth set to
    the median k-NN distance; propagation iterates
    F <- alpha * P F + (1 - alpha) * Y with row-normalized P. Returns the
    class-1 share F1/(F0+F1) of each unknown node in input order (0.5 where
    nothing propagated).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise BaselineError("embeddings must be (n, d) with one label per row")
    n = x.shape[0]
    if k_nn < 1 or iterations < 0 or not (0.0 < alpha < 1.0):
        raise BaselineError("need k_nn >= 1, iterations >= 0 and alpha in (0, 1)")
    known = labels >= 0
    if not np.any(labels == 1) or not np.any(labels == 0):
        raise BaselineError("label propagation needs a known node of each class")
    unknown = np.flatnonzero(~known)
    if unknown.shape[0] == 0:
        raise BaselineError("no unlabelled nodes to score")

    sq = (x ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    dist = np.sqrt(d2)
    if dist.max() <= 0.0:
        raise BaselineError("all embeddings are identical; the affinity graph is degenerate")

    k_eff = min(k_nn, n - 1)
    neighbour = np.argsort(dist, axis=1)[:, 1:k_eff + 1]  # self excluded; stable ties
    knn_d = np.take_along_axis(dist, neighbour, axis=1)
    sigma = float(np.median(knn_d))
    if sigma <= 0.0:
        positive = dist[dist > 0.0]
        sigma = float(positive.min())

    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k_eff)
    w[rows, neighbour.ravel()] = np.exp(-knn_d.ravel() ** 2 / (2.0 * sigma ** 2))
    w = np.maximum(w, w.T)
    rowsum = w.sum(axis=1, keepdims=True)
    p = np.divide(w, rowsum, out=np.zeros_like(w), where=rowsum > 0.0)

    y = np.zeros((n, 2))
    y[known, labels[known]] = 1.0
    f = y.copy()
    for _ in range(iterations):
        f = alpha * (p @ f) + (1.0 - alpha) * y

    totals = f.sum(axis=1)
    shares = np.where(totals > 0.0, f[:, 1] / np.where(totals > 0.0, totals, 1.0), 0.5)
    return shares[unknown]


def pluggable_score_source(method: str) -> str:
    """Validate a score-source name (softmax | MT | LP); returns it unchanged."""
    if method not in SCORE_SOURCES:
        raise BaselineError(f"unknown score source {method!r}; "
                            f"expected one of {', '.join(SCORE_SOURCES)}")
    return method
