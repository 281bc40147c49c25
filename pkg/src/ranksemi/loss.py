"""Joint training objective: supervised cross-entropy plus a ramped,
weighted squared-error term on pseudo-labelled samples.

For a batch of labelled images T and unlabelled images U at epoch t:

    total = (1/|T|) sum_i ce_i  +  lambda(t) * (1/|U|) sum_i eps_i * sum_j w_ij ||p_ij - y_ij||^2

where ce_i is the mean cross-entropy over the K persons sampled from labelled
image i, p_ij the 2-class probability row of sampled person j, y_ij the
one-hot pseudo-label, w the per-person weights (uniform or ISW) and eps the
per-image effectiveness weight. lambda ramps linearly from 0 to lambda_max
over the first ramp_epochs epochs.

The ``*_grad`` variants also return d(value)/d(probs) so a recorded forward
pass can be backpropagated without autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EventImage


class LossError(ValueError):
    """Invalid inputs to a loss function."""

_CE_FLOOR = 1e-12


def sample_labelled(image: EventImage, k: int, rng: np.random.Generator) -> np.ndarray:
    """K person indices from a labelled image: all important persons plus
    uniformly drawn non-important ones.

    Draws without replacement while the non-important pool allows; otherwise
    every pool member appears once and the remaining slots repeat uniform
    draws from the pool (from all persons if the pool is empty).
    """
    if not image.labelled:
        raise LossError(f"image {image.image_id!r} is not labelled")
    labels = image.label_vector()
    important = np.flatnonzero(labels == 1)
    if k < important.shape[0]:
        raise LossError(f"K={k} is smaller than the {important.shape[0]} "
                        f"important persons of image {image.image_id!r}")
    pool = np.flatnonzero(labels == 0)
    fills = k - important.shape[0]
    if fills == 0:
        rest = np.empty(0, dtype=np.int64)
    elif pool.shape[0] >= fills:
        rest = rng.choice(pool, size=fills, replace=False)
    elif pool.shape[0] > 0:
        extra = rng.choice(pool, size=fills - pool.shape[0], replace=True)
        rest = np.concatenate([pool, extra])
    else:
        rest = rng.choice(np.arange(len(image)), size=fills, replace=True)
    return np.concatenate([important, rest]).astype(np.int64)


def labelled_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy -ln p[label] over the sampled persons."""
    return labelled_loss_grad(probs, labels)[0]


def labelled_loss_grad(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """(value, d value / d probs) of the mean cross-entropy."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise LossError(f"probs must be (K, 2), got {probs.shape}")
    if labels.shape[0] != probs.shape[0]:
        raise LossError(f"{labels.shape[0]} labels for {probs.shape[0]} probability rows")
    if np.any((labels != 0) & (labels != 1)):
        raise LossError("labels must be 0/1")
    k = probs.shape[0]
    p_true = probs[np.arange(k), labels]
    clipped = np.maximum(p_true, _CE_FLOOR)
    value = float(-np.log(clipped).mean())
    dprobs = np.zeros_like(probs)
    live = p_true > _CE_FLOOR
    dprobs[np.arange(k)[live], labels[live]] = -1.0 / (k * p_true[live])
    return value, dprobs


def unlabelled_loss(probs: np.ndarray, pseudo_labels: np.ndarray, w: np.ndarray,
                    epsilon: float) -> float:
    """eps * sum_j w_j * ||p_j - onehot(y_j)||^2 over one image's sample."""
    return unlabelled_loss_grad(probs, pseudo_labels, w, epsilon)[0]


def unlabelled_loss_grad(probs: np.ndarray, pseudo_labels: np.ndarray,
                         w: np.ndarray, epsilon: float) -> tuple[float, np.ndarray]:
    """(value, d value / d probs) of the weighted squared-error term."""
    probs = np.asarray(probs, dtype=np.float64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise LossError(f"probs must be (K, 2), got {probs.shape}")
    k = probs.shape[0]
    if pseudo_labels.shape[0] != k or w.shape[0] != k:
        raise LossError("probs, pseudo_labels and w must have matching length")
    if np.any((pseudo_labels != 0) & (pseudo_labels != 1)):
        raise LossError("pseudo-labels must be 0/1")
    if abs(w.sum() - 1.0) > 1e-9 or np.any(w <= 0.0):
        raise LossError("weights must be positive and sum to 1")
    if not (0.0 <= epsilon <= 1.0):
        raise LossError(f"epsilon must be in [0, 1], got {epsilon}")
    targets = np.zeros_like(probs)
    targets[np.arange(k), pseudo_labels] = 1.0
    diff = probs - targets
    value = float(epsilon * (w * (diff ** 2).sum(axis=1)).sum())
    dprobs = 2.0 * epsilon * w[:, None] * diff
    return value, dprobs


def teacher_loss_grad(student_probs: np.ndarray,
                      teacher_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """(value, d value / d student) of mean_j ||s_j - t_j||^2 (soft targets)."""
    s = np.asarray(student_probs, dtype=np.float64)
    t = np.asarray(teacher_probs, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise LossError(f"student/teacher shapes differ: {s.shape} vs {t.shape}")
    k = s.shape[0]
    diff = s - t
    value = float((diff ** 2).sum(axis=1).mean())
    return value, (2.0 / k) * diff


def lambda_schedule(epoch: int, ramp_epochs: int, lambda_max: float) -> float:
    """Linear ramp min(epoch / ramp_epochs, 1) * lambda_max."""
    if epoch < 0:
        raise LossError(f"epoch must be >= 0, got {epoch}")
    if ramp_epochs < 1:
        raise LossError(f"ramp_epochs must be >= 1, got {ramp_epochs}")
    if lambda_max < 0.0:
        raise LossError(f"lambda_max must be >= 0, got {lambda_max}")
    return min(epoch / ramp_epochs, 1.0) * lambda_max


def learning_rate(epoch: int, lr0: float, decay_every: int, factor: float) -> float:
    """Stepwise schedule lr0 * factor^(epoch // decay_every)."""
    if epoch < 0:
        raise LossError(f"epoch must be >= 0, got {epoch}")
    if lr0 <= 0.0 or decay_every < 1 or factor <= 0.0:
        raise LossError("lr0 and factor must be > 0 and decay_every >= 1")
    return lr0 * factor ** (epoch // decay_every)


@dataclass(frozen=True)
class LossBreakdown:
    """One batch/epoch loss decomposition; total == labelled + lam * unlabelled."""

    labelled_term: float
    unlabelled_term: float
    lam: float
    total: float


def total_loss(labelled_terms, unlabelled_terms, lam: float) -> LossBreakdown:
    """Combine per-image terms: means over each batch, unlabelled scaled by lambda."""
    labelled_terms = list(labelled_terms)
    unlabelled_terms = list(unlabelled_terms)
    if not labelled_terms:
        raise LossError("labelled batch must be non-empty")
    if lam < 0.0:
        raise LossError(f"lambda must be >= 0, got {lam}")
    labelled = float(np.mean(labelled_terms))
    unlabelled = float(np.mean(unlabelled_terms)) if unlabelled_terms else 0.0
    return LossBreakdown(labelled, unlabelled, float(lam),
                         labelled + lam * unlabelled)
