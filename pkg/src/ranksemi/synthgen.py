"""Synthetic event-image generator with relational importance.

Images come from a small set of latent event modes. Each mode g has a fixed
anchor m_g (where its contexts live) and a fixed unit importance direction
u_g. An image draws a mode, a context c = m_g + jitter, and persons
x_j = c + personal noise; in non-noise images exactly one person additionally
receives a +prominence_gap offset along u_g, with its remaining personal noise
rescaled orthogonally to u_g so that E||x_j - c||^2 is the same for every
person. Importance is therefore only decidable relationally and per mode: the
offset direction depends on the context, feature norms carry no cue, and no
fixed per-person linear probe can separate important from non-important
across modes.

The labelled pool can be biased toward early modes (``labelled_mode_bias``):
mode g is drawn with probability proportional to bias**g for labelled images
while the unlabelled/validation/test splits stay uniform over modes. With
bias < 1 the tail modes are nearly absent from the labelled pool but richly
covered by the unlabelled pool, so their importance directions are only
learnable from unlabelled data -- the regime where pseudo-labelling has
something to teach.

A fraction of the unlabelled pool can be "noise" images containing nobody
important: no offset anywhere, and every person's noise is flattened along
u_g so nobody even accidentally protrudes along the mode's prominence cue.
Their ids are reported in a sidecar CSV so audits can check that the
effectiveness weight singles them out; labelled, validation and test images
always contain exactly one important person.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .core import Dataset, EventImage, PersonInstance, save_dataset
from .seeding import derive_rng


class SynthError(ValueError):
    """Invalid synthetic-data parameters."""


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters; defaults give a mid-difficulty benchmark."""

    n_labelled: int = 200
    n_unlabelled: int = 2000
    n_val: int = 100
    n_test: int = 500
    feature_dim: int = 8
    people_min: int = 2
    people_max: int = 12
    noise_fraction: float = 0.1
    prominence_gap: float = 1.95
    feature_noise: float = 0.65
    n_modes: int = 16
    mode_scale: float = 2.0
    context_jitter: float = 0.5
    labelled_mode_bias: float = 0.65
    shared_direction: float = 0.5
    seed: int = 3

    def __post_init__(self):
        if min(self.n_labelled, self.n_unlabelled, self.n_val, self.n_test) < 0:
            raise SynthError("image counts must be >= 0")
        if self.feature_dim < 2:
            raise SynthError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.people_min < 2 or self.people_max < self.people_min:
            raise SynthError(f"people range must satisfy 2 <= min <= max, got "
                             f"({self.people_min}, {self.people_max})")
        if not (0.0 <= self.noise_fraction < 1.0):
            raise SynthError(f"noise_fraction must be in [0, 1), got {self.noise_fraction}")
        if self.prominence_gap <= 0.0:
            raise SynthError(f"prominence_gap must be > 0, got {self.prominence_gap}")
        if self.feature_noise < 0.0:
            raise SynthError(f"feature_noise must be >= 0, got {self.feature_noise}")
        if self.n_modes < 1:
            raise SynthError(f"n_modes must be >= 1, got {self.n_modes}")
        if self.mode_scale < 0.0 or self.context_jitter < 0.0:
            raise SynthError("mode_scale and context_jitter must be >= 0")
        if self.labelled_mode_bias <= 0.0:
            raise SynthError(f"labelled_mode_bias must be > 0, "
                             f"got {self.labelled_mode_bias}")
        if not (0.0 <= self.shared_direction <= 1.0):
            raise SynthError(f"shared_direction must be in [0, 1], "
                             f"got {self.shared_direction}")


def _modes(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-seed mode anchors (G, D) and unit importance directions (G, D).

    With shared_direction = s > 0 every mode's unit direction carries a
    sqrt(s) component along one common axis and sqrt(1-s) along a
    mode-specific axis orthogonal to it, i.e. a fraction s of the offset
    energy is a cue that transfers across modes.
    """
    rng = derive_rng(spec.seed, "synth-modes")
    anchors = spec.mode_scale * rng.normal(size=(spec.n_modes, spec.feature_dim))
    raw = rng.normal(size=(spec.n_modes, spec.feature_dim))
    if spec.shared_direction > 0.0:
        axis = rng.normal(size=spec.feature_dim)
        axis /= np.linalg.norm(axis)
        perp = raw - np.outer(raw @ axis, axis)
        norms = np.linalg.norm(perp, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        directions = (np.sqrt(spec.shared_direction) * axis
                      + np.sqrt(1.0 - spec.shared_direction) * perp / norms)
    else:
        directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return anchors, directions


def _mode_pmf(spec: SynthSpec) -> np.ndarray:
    pmf = spec.labelled_mode_bias ** np.arange(spec.n_modes)
    return pmf / pmf.sum()


def _draw_mode(spec: SynthSpec, split: str, rng: np.random.Generator) -> int:
    if split == "lab" and spec.labelled_mode_bias != 1.0:
        return int(rng.choice(spec.n_modes, p=_mode_pmf(spec)))
    return int(rng.integers(spec.n_modes))


def _make_image(spec: SynthSpec, anchors: np.ndarray, directions: np.ndarray,
                split: str, index: int, labelled: bool, noise_image: bool) -> EventImage:
    rng = derive_rng(spec.seed, "synth", split, index)
    mode = _draw_mode(spec, split, rng)
    n = int(rng.integers(spec.people_min, spec.people_max + 1))
    context = anchors[mode] + spec.context_jitter * rng.normal(size=spec.feature_dim)
    noise = spec.feature_noise * rng.normal(size=(n, spec.feature_dim))
    important = int(rng.integers(n))

    u = directions[mode]
    if noise_image:
        # nobody stands out: strip every person's displacement along the
        # mode's prominence direction so no one even accidentally looks
        # important, leaving the off-cue appearance variation untouched
        noise = noise - np.outer(noise @ u, u)
    feats = context + noise
    if not noise_image:
        # matched-norm construction: replace the important person's noise by
        # the gap offset plus orthogonal noise rescaled so E||x - c||^2 is
        # unchanged -- the offset direction, not vector length, is the signal
        sigma2_total = spec.feature_noise ** 2 * spec.feature_dim
        gap2 = spec.prominence_gap ** 2
        perp = noise[important] - (noise[important] @ u) * u
        if sigma2_total > gap2 and spec.feature_dim > 1:
            scale = np.sqrt((sigma2_total - gap2)
                            / (spec.feature_noise ** 2 * (spec.feature_dim - 1)))
        else:
            scale = 0.0
        feats[important] = context + spec.prominence_gap * u + scale * perp

    if labelled:
        persons = tuple(PersonInstance(feats[j], int(j == important)) for j in range(n))
    else:
        persons = tuple(PersonInstance(feats[j], None) for j in range(n))
    return EventImage(f"{split}{index:05d}", labelled, persons)


def generate(spec: SynthSpec) -> tuple[Dataset, Dataset, Dataset, Dataset, dict[str, bool]]:
    """Build (labelled, unlabelled, val, test) datasets plus noise flags.

    The noise flags map each unlabelled image id to whether it is a noise
    image; exactly round(noise_fraction * n_unlabelled) of them are, chosen by
    a seeded permutation. Labelled/val/test images are never noise.
    """
    n_noise = round(spec.noise_fraction * spec.n_unlabelled)
    pick_rng = derive_rng(spec.seed, "synth-noise-pick")
    noise_idx = set(pick_rng.permutation(spec.n_unlabelled)[:n_noise].tolist())
    anchors, directions = _modes(spec)

    def make(split, count, labelled, noise=frozenset()):
        return [_make_image(spec, anchors, directions, split, i, labelled, i in noise)
                for i in range(count)]

    labelled = make("lab", spec.n_labelled, True)
    unlabelled = make("unl", spec.n_unlabelled, False, noise_idx)
    val = make("val", spec.n_val, True)
    test = make("tst", spec.n_test, True)
    noise_flags = {img.image_id: (i in noise_idx) for i, img in enumerate(unlabelled)}

    d = spec.feature_dim
    return (Dataset(tuple(labelled), d), Dataset(tuple(unlabelled), d),
            Dataset(tuple(val), d), Dataset(tuple(test), d), noise_flags)


def true_important_index(spec: SynthSpec, split: str, index: int) -> int:
    """Ground-truth important-person index the generator drew for one image
    (for unlabelled images: the person who would carry the offset in a
    non-noise image). Mirrors the generator's draw order."""
    rng = derive_rng(spec.seed, "synth", split, index)
    _draw_mode(spec, split, rng)
    n = int(rng.integers(spec.people_min, spec.people_max + 1))
    rng.normal(size=spec.feature_dim)
    rng.normal(size=(n, spec.feature_dim))
    return int(rng.integers(n))


def write_noise_flags(noise_flags: dict[str, bool], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "is_noise"])
        for image_id, flag in noise_flags.items():
            writer.writerow([image_id, int(flag)])


def read_noise_flags(path) -> dict[str, bool]:
    flags: dict[str, bool] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            flags[row["image_id"]] = bool(int(row["is_noise"]))
    return flags


def write_synth(spec: SynthSpec, out_dir) -> None:
    """Generate and write labelled/unlabelled/val/test JSONL plus noise_flags.csv."""
    os.makedirs(out_dir, exist_ok=True)
    labelled, unlabelled, val, test, noise_flags = generate(spec)
    save_dataset(labelled, os.path.join(out_dir, "labelled.jsonl"))
    save_dataset(unlabelled, os.path.join(out_dir, "unlabelled.jsonl"))
    save_dataset(val, os.path.join(out_dir, "val.jsonl"))
    save_dataset(test, os.path.join(out_dir, "test.jsonl"))
    write_noise_flags(noise_flags, os.path.join(out_dir, "noise_flags.csv"))
