"""Ranking-based pseudo-label assignment for unlabelled images.

Given the model's full-graph importance scores z+ for one image, scores are
scaled by their maximum to ranking scores in [0, 1]; persons at or above a
threshold alpha form the important set. The sample fed to the unlabelled loss
is the top-1 ranked person (pseudo-label 1) plus K-1 persons drawn from the
non-important remainder (pseudo-label 0) — never the other way around, so a
sample always contains exactly one pseudo-important person and the trivial
all-non-important assignment cannot occur.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import RelationModel, importance_probs
from .core import EventImage


class PseudoLabelError(ValueError):
    """Invalid scores or parameters for pseudo-label assignment."""


@dataclass(frozen=True)
class PseudoLabelAssignment:
    """RankS output for one image.

    ``scores``/``ranking_scores`` cover all N persons; ``sample_indices`` and
    ``pseudo_labels`` have length K with the top-1 person at slot 0.
    """

    image_id: str
    scores: np.ndarray
    ranking_scores: np.ndarray
    important_indices: tuple[int, ...]
    sample_indices: np.ndarray
    pseudo_labels: np.ndarray


def importance_scores(model: RelationModel, image: EventImage) -> np.ndarray:
    """Full-graph importance scores z+ for every person of the image."""
    return importance_probs(model, image.feature_matrix())


def rank_and_label(scores: np.ndarray, alpha: float, k: int,
                   rng: np.random.Generator):
    """Rank one image's scores and sample K persons with pseudo-labels.

    Returns ``(sample_indices, pseudo_labels, important_indices,
    ranking_scores)``. Slot 0 of the sample is the top-1 person (lowest index
    on ties) with pseudo-label 1; the remaining K-1 slots are non-important
    persons with pseudo-label 0, drawn without replacement when the pool
    allows, with replacement from the pool otherwise, and from all non-top-1
    persons if the pool is empty (repeating the top-1 only when N == 1).
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.shape[0]
    if n == 0:
        raise PseudoLabelError("scores must be non-empty")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0.0):
        raise PseudoLabelError("scores must be finite and non-negative")
    if not (0.0 < alpha <= 1.0):
        raise PseudoLabelError(f"alpha must be in (0, 1], got {alpha}")
    if k < 2:
        raise PseudoLabelError(f"sample size K must be >= 2, got {k}")
    smax = scores.max()
    if smax <= 0.0:
        raise PseudoLabelError("max score must be positive to form ranking scores")

    ranking = scores / smax
    top1 = int(np.argmax(ranking))  # argmax takes the lowest index on ties
    important = tuple(int(j) for j in np.flatnonzero(ranking >= alpha))

    pool = np.array([j for j in range(n) if ranking[j] < alpha], dtype=np.int64)
    need = k - 1
    if pool.shape[0] >= need:
        rest = rng.choice(pool, size=need, replace=False)
    elif pool.shape[0] > 0:
        extra = rng.choice(pool, size=need - pool.shape[0], replace=True)
        rest = np.concatenate([pool, extra])
    else:
        fallback = np.array([j for j in range(n) if j != top1], dtype=np.int64)
        if fallback.shape[0] > 0:
            rest = rng.choice(fallback, size=need, replace=True)
        else:
            rest = np.full(need, top1, dtype=np.int64)  # single-person image

    sample = np.concatenate([[top1], rest]).astype(np.int64)
    labels = np.zeros(k, dtype=np.int64)
    labels[0] = 1
    return sample, labels, important, ranking


def assign_pseudo_labels(model: RelationModel, image: EventImage, alpha: float,
                         k: int, rng: np.random.Generator) -> PseudoLabelAssignment:
    """Score an unlabelled image with the model and run rank_and_label on it."""
    scores = importance_scores(model, image)
    sample, labels, important, ranking = rank_and_label(scores, alpha, k, rng)
    return PseudoLabelAssignment(image.image_id, scores, ranking, important,
                                 sample, labels)


def write_pseudo_label_audit(assignments, path) -> None:
    """Per-person audit CSV: one row per (image, person).

    Columns: image_id, person_index, score, ranking_score, important(0/1),
    sampled(0/1), pseudo_label (empty when not sampled).
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "person_index", "score", "ranking_score",
                         "important", "sampled", "pseudo_label"])
        for a in assignments:
            label_of = {}
            for slot, j in enumerate(a.sample_indices):
                label_of.setdefault(int(j), int(a.pseudo_labels[slot]))
            for j in range(a.scores.shape[0]):
                writer.writerow([
                    a.image_id, j,
                    repr(float(a.scores[j])), repr(float(a.ranking_scores[j])),
                    int(j in a.important_indices),
                    int(j in label_of),
                    label_of.get(j, ""),
                ])
