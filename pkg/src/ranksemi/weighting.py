"""Per-sample and per-image weights for the unlabelled loss.

Importance-score weighting (ISW) turns the sampled persons' scores into a
softmax distribution, so the pseudo-important person dominates the sample's
loss instead of being drowned out by the K-1 non-important ones. The
effectiveness weight (EW) down-weights whole images whose score distribution
looks uniform — the signature of a noise image with nobody important in it:

    eps = 1 - H(z+ / sum(z+)) / ln(K),   0 <= eps <= 1,

with H the Shannon entropy (0*ln(0) := 0). eps is 1 when one person carries
all the score mass and 0 when the scores are exactly uniform.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class WeightingError(ValueError):
    """Invalid inputs to a weighting function."""


@dataclass(frozen=True)
class UnlabelledWeights:
    """Per-person weights w (sum 1, all > 0) and per-image weight eps in [0, 1]."""

    w: np.ndarray
    epsilon: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if w.shape[0] == 0:
            raise WeightingError("weights must be non-empty")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise WeightingError("weights must be finite and positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise WeightingError(f"weights must sum to 1, got {w.sum()!r}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise WeightingError(f"epsilon must be in [0, 1], got {self.epsilon}")
        object.__setattr__(self, "w", w)


def importance_score_weights(scores: np.ndarray) -> np.ndarray:
    """Softmax over the sampled persons' scores: positive, sums to 1."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] == 0:
        raise WeightingError("scores must be non-empty")
    if not np.all(np.isfinite(scores)):
        raise WeightingError("scores must be finite")
    shifted = scores - scores.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def effectiveness_weight(scores: np.ndarray) -> float:
    """Image-level weight eps = 1 - H(normalized scores) / ln(K), clamped to [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    k = scores.shape[0]
    if k < 2:
        raise WeightingError(f"effectiveness weight needs >= 2 scores, got {k}")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0.0):
        raise WeightingError("scores must be finite and non-negative")
    total = scores.sum()
    if total <= 0.0:
        raise WeightingError("scores must not be all zero")
    p = scores / total
    nz = p[p > 0.0]
    entropy = float(-(nz * np.log(nz)).sum())
    eps = 1.0 - entropy / np.log(k)
    return float(min(1.0, max(0.0, eps)))


def write_ew_audit(rows, path) -> None:
    """EW audit CSV: one row per unlabelled image.

    ``rows`` yields (image_id, epsilon, is_noise) triples; is_noise may be
    None when no noise sidecar is available (written as an empty field).
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "epsilon", "is_noise"])
        for image_id, epsilon, is_noise in rows:
            writer.writerow([image_id, repr(float(epsilon)),
                             "" if is_noise is None else int(is_noise)])
