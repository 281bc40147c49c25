"""Domain types and dataset I/O.

An event image is a variable-sized set of detected persons, each described by a
fixed-dimensional feature vector. Labelled images mark every person as
important (1) or not (0) and contain at least one important person; unlabelled
images carry no labels at all — mixed labelling within an image is rejected.

Datasets are stored as JSON Lines, one image per line::

    {"id": "lab00000", "labelled": true,
     "persons": [{"features": [...], "importance": 1}, ...]}

``importance`` must be present (0/1) on every person of a labelled image and
``null`` on every person of an unlabelled one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """A dataset file or structure violates the format contract."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PersonInstance:
    """One detected person: a feature vector and an optional importance label."""

    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        feats = _freeze(np.atleast_1d(self.features))
        if feats.ndim != 1:
            raise DatasetError(f"person features must be 1-D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("person features must be finite")
        if self.label is not None and self.label not in (0, 1):
            raise DatasetError(f"importance label must be 0, 1 or None, got {self.label!r}")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class EventImage:
    """A set of persons from one image, either fully labelled or fully unlabelled."""

    image_id: str
    labelled: bool
    persons: tuple[PersonInstance, ...]

    def __post_init__(self):
        persons = tuple(self.persons)
        if not persons:
            raise DatasetError(f"image {self.image_id!r} has no persons")
        if self.labelled:
            if any(p.label is None for p in persons):
                raise DatasetError(f"labelled image {self.image_id!r} has an unlabelled person")
            if not any(p.label == 1 for p in persons):
                raise DatasetError(f"labelled image {self.image_id!r} has no important person")
        else:
            if any(p.label is not None for p in persons):
                raise DatasetError(f"unlabelled image {self.image_id!r} carries importance labels")
        object.__setattr__(self, "persons", persons)

    def __len__(self) -> int:
        return len(self.persons)

    def feature_matrix(self) -> np.ndarray:
        """Stack person features into an (N, D) array."""
        return np.stack([p.features for p in self.persons])

    def label_vector(self) -> np.ndarray:
        """Importance labels as an int array of length N (labelled images only)."""
        if not self.labelled:
            raise DatasetError(f"image {self.image_id!r} is unlabelled")
        return np.array([p.label for p in self.persons], dtype=np.int64)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of event images with a consistent feature dimension."""

    images: tuple[EventImage, ...]
    feature_dim: int

    def __post_init__(self):
        images = tuple(self.images)
        seen: set[str] = set()
        for img in images:
            if img.image_id in seen:
                raise DatasetError(f"duplicate image id {img.image_id!r}")
            seen.add(img.image_id)
            for p in img.persons:
                if p.features.shape[0] != self.feature_dim:
                    raise DatasetError(
                        f"image {img.image_id!r}: feature dim {p.features.shape[0]} "
                        f"!= dataset dim {self.feature_dim}"
                    )
        object.__setattr__(self, "images", images)

    def __len__(self) -> int:
        return len(self.images)

    def labelled_images(self) -> list[EventImage]:
        return [img for img in self.images if img.labelled]

    def unlabelled_images(self) -> list[EventImage]:
        return [img for img in self.images if not img.labelled]


def _person_from_obj(obj, image_id: str, labelled: bool, lineno: int) -> PersonInstance:
    if not isinstance(obj, dict) or "features" not in obj:
        raise DatasetError(f"line {lineno}: person entry must be an object with 'features'")
    importance = obj.get("importance")
    if labelled and importance not in (0, 1):
        raise DatasetError(
            f"line {lineno}: labelled image {image_id!r} needs importance 0/1 on every person"
        )
    if not labelled and importance is not None:
        raise DatasetError(
            f"line {lineno}: unlabelled image {image_id!r} must have importance null"
        )
    try:
        return PersonInstance(np.asarray(obj["features"], dtype=np.float64),
                              int(importance) if labelled else None)
    except (TypeError, ValueError, DatasetError) as exc:
        raise DatasetError(f"line {lineno}: {exc}") from exc


def load_dataset(path) -> Dataset:
    """Parse a JSONL dataset file; malformed lines raise DatasetError with line numbers."""
    images: list[EventImage] = []
    feature_dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"line {lineno}: expected a JSON object")
            for key in ("id", "labelled", "persons"):
                if key not in obj:
                    raise DatasetError(f"line {lineno}: missing key {key!r}")
            image_id = str(obj["id"])
            labelled = bool(obj["labelled"])
            raw_persons = obj["persons"]
            if not isinstance(raw_persons, list) or not raw_persons:
                raise DatasetError(f"line {lineno}: 'persons' must be a non-empty list")
            persons = tuple(_person_from_obj(p, image_id, labelled, lineno) for p in raw_persons)
            for p in persons:
                if feature_dim is None:
                    feature_dim = p.features.shape[0]
                elif p.features.shape[0] != feature_dim:
                    raise DatasetError(
                        f"line {lineno}: feature dim {p.features.shape[0]} != {feature_dim}"
                    )
            try:
                images.append(EventImage(image_id, labelled, persons))
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
    if not images:
        raise DatasetError(f"{path}: dataset is empty")
    try:
        return Dataset(tuple(images), int(feature_dim))
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as JSONL; floats round-trip exactly through json repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for img in dataset.images:
            persons = [
                {"features": [float(x) for x in p.features],
                 "importance": None if p.label is None else int(p.label)}
                for p in img.persons
            ]
            fh.write(json.dumps({"id": img.image_id, "labelled": img.labelled,
                                 "persons": persons}) + "\n")


def strip_labels(image: EventImage) -> EventImage:
    """Demote a labelled image to the unlabelled pool (labels dropped)."""
    persons = tuple(PersonInstance(p.features, None) for p in image.persons)
    return EventImage(image.image_id, False, persons)


def split_dataset(dataset: Dataset, labelled_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Keep a random fraction of the labelled images; demote the rest.

    Returns ``(labelled_subset, unlabelled_pool)`` where the pool is the demoted
    labelled images plus all originally unlabelled ones. The union of the two
    outputs is the input image set; both preserve the input's image order.
    """
    if not (0.0 < labelled_fraction <= 1.0):
        raise DatasetError(f"labelled_fraction must be in (0, 1], got {labelled_fraction}")
    labelled = dataset.labelled_images()
    if not labelled:
        raise DatasetError("split requires at least one labelled image")
    n_keep = math.floor(labelled_fraction * len(labelled))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labelled))
    keep_ids = {labelled[i].image_id for i in perm[:n_keep]}
    kept: list[EventImage] = []
    pool: list[EventImage] = []
    for img in dataset.images:
        if img.labelled and img.image_id in keep_ids:
            kept.append(img)
        elif img.labelled:
            pool.append(strip_labels(img))
        else:
            pool.append(img)
    return (Dataset(tuple(kept), dataset.feature_dim),
            Dataset(tuple(pool), dataset.feature_dim))
