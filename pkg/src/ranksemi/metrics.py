"""Evaluation: per-image average precision, mAP, CMC, pseudo-label statistics.

Persons of one image are ranked by descending importance score, ties broken
toward the lower person index. AP is the mean of the precision values at the
ranks where true important persons sit; mAP averages AP over images. The CMC
value at rank r is the fraction of images whose top-r ranked persons contain
at least one true important person.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .model import RelationModel, importance_probs


class MetricsError(ValueError):
    """Invalid inputs to an evaluation function."""


def _ranked_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score; equal scores keep ascending index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one image's ranking against its 0/1 importance labels."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.shape[0] != labels.shape[0] or scores.shape[0] == 0:
        raise MetricsError("scores and labels must be non-empty and match in length")
    if np.any((labels != 0) & (labels != 1)):
        raise MetricsError("labels must be 0/1")
    if labels.sum() == 0:
        raise MetricsError("average precision needs at least one positive label")
    order = _ranked_order(scores)
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, ranked.shape[0] + 1)
    precisions = hits[ranked == 1] / ranks[ranked == 1]
    # fsum: correctly-rounded mean, independent of accumulation order
    return math.fsum(precisions) / precisions.shape[0]


@dataclass(frozen=True)
class EvaluationReport:
    """mAP, CMC vector (ranks 1..R), and the AP of every test image."""

    map: float
    cmc: np.ndarray
    per_image_ap: dict[str, float]


def mean_ap(model: RelationModel, dataset: Dataset) -> float:
    """mAP of the model over a fully labelled dataset."""
    return evaluate(model, dataset, max_rank=1).map


def cmc(model: RelationModel, dataset: Dataset, max_rank: int) -> np.ndarray:
    """CMC values at ranks 1..max_rank (non-decreasing, last entry 1 when
    max_rank covers every image's person count)."""
    return evaluate(model, dataset, max_rank=max_rank).cmc


def evaluate(model: RelationModel, dataset: Dataset, max_rank: int = 8) -> EvaluationReport:
    """Score every test image once and compute mAP, CMC and per-image AP."""
    if max_rank < 1:
        raise MetricsError(f"max_rank must be >= 1, got {max_rank}")
    if len(dataset) == 0:
        raise MetricsError("evaluation dataset is empty")
    per_image: dict[str, float] = {}
    cmc_hits = np.zeros(max_rank, dtype=np.float64)
    for img in dataset.images:
        if not img.labelled:
            raise MetricsError(f"evaluation image {img.image_id!r} is unlabelled")
        scores = importance_probs(model, img.feature_matrix())
        labels = img.label_vector()
        per_image[img.image_id] = average_precision(scores, labels)
        order = _ranked_order(scores)
        first_hit = int(np.flatnonzero(labels[order] == 1)[0])  # 0-based rank
        if first_hit < max_rank:
            cmc_hits[first_hit:] += 1.0
    cmc_curve = cmc_hits / len(dataset)
    return EvaluationReport(float(np.mean(list(per_image.values()))), cmc_curve, per_image)


def pseudo_label_histogram(important_counts) -> dict[str, int]:
    """Bucket per-image counts of pseudo-important persons into 0/1/2/3+."""
    counts = [int(c) for c in important_counts]
    if not counts:
        raise MetricsError("histogram needs at least one image")
    if any(c < 0 for c in counts):
        raise MetricsError("important-person counts must be >= 0")
    hist = {"0": 0, "1": 0, "2": 0, "3+": 0}
    for c in counts:
        hist[str(c) if c < 3 else "3+"] += 1
    return hist


def write_evaluation_report(report: EvaluationReport, out_dir,
                            histogram: dict[str, int] | None = None) -> None:
    """Emit per_image_ap.csv, cmc.csv, summary.json (and histogram.csv if given)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "per_image_ap.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "ap"])
        for image_id, ap in report.per_image_ap.items():
            writer.writerow([image_id, repr(float(ap))])
    with open(os.path.join(out_dir, "cmc.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "cmc"])
        for r, value in enumerate(report.cmc, start=1):
            writer.writerow([r, repr(float(value))])
    if histogram is not None:
        with open(os.path.join(out_dir, "histogram.csv"), "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bucket", "images"])
            for bucket, count in histogram.items():
                writer.writerow([bucket, count])
    summary = {
        "map": float(report.map),
        "cmc": [float(v) for v in report.cmc],
        "histogram": histogram,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
