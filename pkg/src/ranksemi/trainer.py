"""Iterative semi-supervised training loop and ablation harness.

One optimization step processes one labelled batch and one unlabelled batch
and applies a single SGD update of the joint objective (see ``loss``). The
unlabelled side is scored with the pre-update parameters (every score is
computed before the step's ``sgd_step``, so pseudo-labels never react to
their own update), ranked and pseudo-labelled, weighted, and pushed through
a squared-error term ramped in by the lambda schedule. ``method`` selects the
full pipeline, an ablated variant, a baseline, or plain supervised training:

    supervised             labelled term only (unlabelled pool never touched)
    ours                   RankS sampling + ISW person weights + EW image weights
    ours_no_EW             RankS + ISW, eps = 1
    ours_no_ISW_EW         RankS, uniform weights, eps = 1
    ours_no_RankS_ISW_EW   uniform sampling, thresholded scores (identical to PL)
    PL                     pseudo-label baseline
    MT                     mean-teacher baseline (EMA soft targets)
    LP                     label-propagation baseline

Every random draw comes from a stream derived from (seed, purpose, epoch,
image id), so a run is reproducible bit-for-bit for a fixed config and the
supervised trajectory is independent of the unlabelled pool's contents.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, loss as loss_mod, pseudolabel, weighting
from .core import Dataset, EventImage
from .metrics import mean_ap, pseudo_label_histogram
from .model import (OptimizerState, RelationModel, forward, gradients,
                    importance_probs, init_model, init_optimizer, sgd_step)
from .seeding import derive_rng


class TrainError(ValueError):
    """Invalid training configuration or data."""

METHODS = ("supervised", "ours", "ours_no_EW", "ours_no_ISW_EW",
           "ours_no_RankS_ISW_EW", "PL", "MT", "LP")

# methods whose unlabelled branch runs the ranking pipeline
_RANKS_METHODS = ("ours", "ours_no_EW", "ours_no_ISW_EW")


@dataclass(frozen=True)
class TrainingConfig:
    """All knobs of one training run; every field is addressable from the
    config file and ``--set key=value`` overrides."""

    k: int = 8
    alpha: float = 0.99
    epochs: int = 60
    ramp_epochs: int = 35
    lambda_max: float = 1.0
    lr0: float = 0.001
    lr_decay_every: int = 20
    lr_factor: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_labelled: int = 2
    batch_unlabelled: int = 8
    seed: int = 0
    method: str = "ours"
    score_source: str = "softmax"
    hidden: int = 32
    mt_decay: float = 0.99
    lp_k_nn: int = 10
    lp_alpha: float = 0.99
    lp_iterations: int = 20

    def __post_init__(self):
        if self.k < 2:
            raise TrainError(f"k must be >= 2, got {self.k}")
        if not (0.0 < self.alpha <= 1.0):
            raise TrainError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.epochs < 1 or self.ramp_epochs < 1:
            raise TrainError("epochs and ramp_epochs must be >= 1")
        if self.lambda_max < 0.0:
            raise TrainError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.lr0 <= 0.0 or self.lr_decay_every < 1 or not (0.0 < self.lr_factor <= 1.0):
            raise TrainError("invalid learning-rate schedule parameters")
        if not (0.0 <= self.momentum < 1.0):
            raise TrainError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise TrainError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_labelled < 1 or self.batch_unlabelled < 1:
            raise TrainError("batch sizes must be >= 1")
        if self.hidden < 1:
            raise TrainError(f"hidden must be >= 1, got {self.hidden}")
        if self.method not in METHODS:
            raise TrainError(f"unknown method {self.method!r}; expected one of "
                             f"{', '.join(METHODS)}")
        baselines.pluggable_score_source(self.score_source)
        if not (0.0 <= self.mt_decay <= 1.0):
            raise TrainError(f"mt_decay must be in [0, 1], got {self.mt_decay}")
        if self.lp_k_nn < 1 or self.lp_iterations < 0 or not (0.0 < self.lp_alpha < 1.0):
            raise TrainError("invalid label-propagation parameters")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    value = value.strip()
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError as exc:
        raise TrainError(f"config key {key!r}: cannot parse {value!r} as {kind}") from exc


def _unknown_key(key: str) -> TrainError:
    return TrainError(f"unknown config key {key!r}; valid keys: "
                      f"{', '.join(sorted(_FIELD_TYPES))}")


def parse_config(path) -> TrainingConfig:
    """Read a flat ``key = value`` config file (# comments, blank lines ok)."""
    updates = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise TrainError(f"{path} line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise _unknown_key(key)
            updates[key] = _coerce(key, value)
    return TrainingConfig(**updates)


def write_config(cfg: TrainingConfig, path) -> None:
    """Dump every config field as ``key = value`` (parse_config round-trips it)."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(TrainingConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")


def apply_overrides(cfg: TrainingConfig, overrides) -> TrainingConfig:
    """Apply ``key=value`` strings on top of a config."""
    updates = {}
    for item in overrides:
        if "=" not in item:
            raise TrainError(f"override {item!r} is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _FIELD_TYPES:
            raise _unknown_key(key)
        updates[key] = _coerce(key, value.strip("'\""))
    return replace(cfg, **updates)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    lam: float
    labelled_term: float
    unlabelled_term: float
    total: float
    mean_epsilon: float
    val_map: float
    histogram: dict[str, int]


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_map: float = float("nan")
    final_model: RelationModel | None = None


def write_history_csv(history: TrainingHistory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "lambda", "labelled_term", "unlabelled_term",
                         "total", "mean_epsilon", "val_map",
                         "hist_0", "hist_1", "hist_2", "hist_3plus"])
        for r in history.records:
            writer.writerow([r.epoch, repr(r.lr), repr(r.lam), repr(r.labelled_term),
                             repr(r.unlabelled_term), repr(r.total),
                             repr(r.mean_epsilon), repr(r.val_map),
                             r.histogram["0"], r.histogram["1"], r.histogram["2"],
                             r.histogram["3+"]])


_ZERO_HIST = {"0": 0, "1": 0, "2": 0, "3+": 0}


def _teacher_model(cfg: TrainingConfig, model: RelationModel,
                   teacher: baselines.TeacherState) -> RelationModel:
    return RelationModel(model.feature_dim, cfg.hidden, teacher.theta)


# propagation graph composition: the labelled side of a step's graph is
# topped up to _LP_GRAPH_IMAGES images so the known nodes span enough event
# modes, and _LP_GRAPH_EXTRA_UNL additional unlabelled images join as
# score-only context so the diffusion can travel through a denser unlabelled
# manifold (their shares are discarded)
_LP_GRAPH_IMAGES = 16
_LP_GRAPH_EXTRA_UNL = 16


def _lp_batch_scores(cfg: TrainingConfig, lab_batch: list[EventImage],
                     person_sets: list[np.ndarray],
                     lab_pool: list[EventImage] | None = None,
                     unl_pool: list[EventImage] | None = None) -> list[np.ndarray]:
    """Propagate labelled labels to each unlabelled feature block.

    ``person_sets`` holds one (n_i, D) matrix per unlabelled image; returns
    the class-1 share of each of its rows.  Graph nodes are individual
    persons; their coordinates are the person features centered within each
    image, so distances compare relative standing (who protrudes from their
    own image) instead of absolute appearance, which is dominated by the
    event context.  Propagating over the input features rather than a live
    hidden layer keeps the pseudo-scores independent of the model being
    trained, so their quality does not collapse in early epochs.  When
    ``lab_pool``/``unl_pool`` are given, the graph is enlarged per the
    module constants above with draws seeded by the batch composition,
    keeping the step deterministic.
    """

    def centered(feats: np.ndarray) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        return feats - feats.mean(axis=0)

    rng = derive_rng(cfg.seed, "lp-graph",
                     *sorted(img.image_id for img in lab_batch))
    graph_lab = list(lab_batch)
    if lab_pool is not None and len(lab_pool) > len(graph_lab):
        in_batch = {img.image_id for img in graph_lab}
        extras = [img for img in lab_pool if img.image_id not in in_batch]
        want = min(_LP_GRAPH_IMAGES - len(graph_lab), len(extras))
        if want > 0:
            graph_lab += [extras[j] for j in rng.choice(len(extras), want,
                                                        replace=False)]

    emb_blocks, label_blocks = [], []
    for img in graph_lab:
        emb_blocks.append(centered(img.feature_matrix()))
        label_blocks.append(img.label_vector())
    sizes = []
    for feats in person_sets:
        emb_blocks.append(centered(feats))
        label_blocks.append(np.full(feats.shape[0], -1, dtype=np.int64))
        sizes.append(feats.shape[0])
    if unl_pool is not None and _LP_GRAPH_EXTRA_UNL > 0:
        for j in rng.choice(len(unl_pool),
                            min(_LP_GRAPH_EXTRA_UNL, len(unl_pool)),
                            replace=False):
            feats = unl_pool[j].feature_matrix()
            emb_blocks.append(centered(feats))
            label_blocks.append(np.full(feats.shape[0], -1, dtype=np.int64))
    shares = baselines.lp_scores(np.concatenate(emb_blocks),
                                 np.concatenate(label_blocks),
                                 k_nn=cfg.lp_k_nn, alpha=cfg.lp_alpha,
                                 iterations=cfg.lp_iterations)
    out, offset = [], 0
    for size in sizes:
        out.append(shares[offset:offset + size])
        offset += size
    return out


def _full_graph_scores(cfg: TrainingConfig, model: RelationModel,
                       teacher: baselines.TeacherState | None,
                       lab_batch: list[EventImage],
                       unl_batch: list[EventImage],
                       lab_pool: list[EventImage] | None = None,
                       unl_pool: list[EventImage] | None = None) -> list[np.ndarray]:
    """Score every person of every unlabelled batch image with the configured
    score source (pre-update parameters).

    Softmax and teacher probabilities are importance scores as-is.  Raw
    propagation shares are not: heavy graph smoothing compresses them into a
    narrow band around the global class ratio, which would leave the sampled
    score vectors near-uniform no matter how informative their ordering is.
    The LP source therefore calibrates each image's shares to the unit
    interval (per-image min-max, a monotone map), so downstream selection and
    weighting see the ordering at full scale.  An image whose shares are
    exactly tied calibrates to a flat 1/2 vector.
    """
    source = cfg.score_source
    if source == "softmax":
        return [pseudolabel.importance_scores(model, img) for img in unl_batch]
    if source == "MT":
        t_model = _teacher_model(cfg, model, teacher)
        return [pseudolabel.importance_scores(t_model, img) for img in unl_batch]
    shares = _lp_batch_scores(cfg, lab_batch,
                              [img.feature_matrix() for img in unl_batch],
                              lab_pool, unl_pool)
    calibrated = []
    for share in shares:
        lo, hi = share.min(), share.max()
        calibrated.append(np.full_like(share, 0.5) if hi <= lo
                          else (share - lo) / (hi - lo))
    return calibrated


def train(cfg: TrainingConfig, labelled: Dataset, unlabelled: Dataset,
          val: Dataset) -> tuple[RelationModel, TrainingHistory]:
    """Run one training job; returns (best-validation model, history).

    The history's ``final_model`` is the end-of-training model; the returned
    model is the epoch checkpoint with the highest validation mAP (later epoch
    on ties).
    """
    lab_images = labelled.labelled_images()
    if not lab_images:
        raise TrainError("training requires a non-empty labelled dataset")
    if len(lab_images) != len(labelled):
        raise TrainError("labelled dataset contains unlabelled images")
    unl_images = unlabelled.unlabelled_images()
    if len(unl_images) != len(unlabelled):
        raise TrainError("unlabelled pool contains labelled images")
    for ds in (unlabelled, val):
        if len(ds) and ds.feature_dim != labelled.feature_dim:
            raise TrainError("datasets disagree on feature dimension")
    needs_unlabelled = cfg.method != "supervised"
    if needs_unlabelled and not unl_images:
        raise TrainError(f"method {cfg.method!r} needs a non-empty unlabelled pool")

    model = init_model(labelled.feature_dim, cfg.hidden,
                       int(derive_rng(cfg.seed, "init").integers(2 ** 31)))
    opt = init_optimizer(model, cfg.momentum, cfg.weight_decay)
    uses_teacher = cfg.method == "MT" or (cfg.method in _RANKS_METHODS
                                          and cfg.score_source == "MT")
    teacher = baselines.TeacherState(model.theta, cfg.mt_decay) if uses_teacher else None

    history = TrainingHistory()
    best_theta = model.theta.copy()
    best_val = -np.inf
    n_lab = len(lab_images)
    # an epoch is one pass over the larger pool; the smaller pool recycles.
    # The step count is method-independent so runs differ only in the loss.
    steps_per_epoch = max(math.ceil(n_lab / cfg.batch_labelled),
                          math.ceil(len(unl_images) / cfg.batch_unlabelled)
                          if unl_images else 0)
    unl_cursor = 0

    for epoch in range(cfg.epochs):
        lam = loss_mod.lambda_schedule(epoch, cfg.ramp_epochs, cfg.lambda_max)
        lr = loss_mod.learning_rate(epoch, cfg.lr0, cfg.lr_decay_every, cfg.lr_factor)
        run_unlabelled = needs_unlabelled and lam > 0.0

        lab_order = derive_rng(cfg.seed, "shuffle-lab", epoch).permutation(n_lab)
        if run_unlabelled:
            unl_order = derive_rng(cfg.seed, "shuffle-unl", epoch).permutation(len(unl_images))

        step_labelled, step_unlabelled, step_total = [], [], []
        epsilons: list[float] = []
        important_counts: list[int] = []

        for step in range(steps_per_epoch):
            lab_batch = [lab_images[lab_order[(step * cfg.batch_labelled + i) % n_lab]]
                         for i in range(cfg.batch_labelled)]
            grad = np.zeros_like(model.theta)

            lab_terms = []
            for img in lab_batch:
                rng = derive_rng(cfg.seed, "labsample", epoch, img.image_id)
                idx = loss_mod.sample_labelled(img, cfg.k, rng)
                probs, tape = forward(model, img.feature_matrix()[idx], record=True)
                value, dprobs = loss_mod.labelled_loss_grad(probs, img.label_vector()[idx])
                grad += gradients(model, tape, dprobs) / len(lab_batch)
                lab_terms.append(value)

            unl_terms = []
            if run_unlabelled:
                unl_batch = [unl_images[unl_order[(unl_cursor + i) % len(unl_images)]]
                             for i in range(cfg.batch_unlabelled)]
                unl_cursor = (unl_cursor + cfg.batch_unlabelled) % len(unl_images)
                coeff = lam / len(unl_batch)

                if cfg.method in _RANKS_METHODS:
                    # pre-update parameters: all scoring precedes this step's
                    # sgd_step, so pseudo-labels never see their own update
                    scores_full = _full_graph_scores(cfg, model, teacher,
                                                     lab_batch, unl_batch,
                                                     lab_images, unl_images)
                    for img, scores in zip(unl_batch, scores_full):
                        rng = derive_rng(cfg.seed, "ranks", epoch, img.image_id)
                        sample, labels, important, _ = pseudolabel.rank_and_label(
                            scores, cfg.alpha, cfg.k, rng)
                        z = scores[sample]
                        w = (weighting.importance_score_weights(z)
                             if cfg.method in ("ours", "ours_no_EW")
                             else np.full(cfg.k, 1.0 / cfg.k))
                        eps = (weighting.effectiveness_weight(z)
                               if cfg.method == "ours" else 1.0)
                        probs, tape = forward(model, img.feature_matrix()[sample],
                                              record=True)
                        value, dprobs = loss_mod.unlabelled_loss_grad(probs, labels, w, eps)
                        grad += gradients(model, tape, dprobs) * coeff
                        unl_terms.append(value)
                        epsilons.append(eps)
                        important_counts.append(len(important))
                elif cfg.method in ("PL", "ours_no_RankS_ISW_EW"):
                    uniform = np.full(cfg.k, 1.0 / cfg.k)
                    for img in unl_batch:
                        rng = derive_rng(cfg.seed, "ranks", epoch, img.image_id)
                        sample = baselines.uniform_person_sample(len(img), cfg.k, rng)
                        feats = img.feature_matrix()[sample]
                        labels = baselines.pl_labels(importance_probs(model, feats))
                        probs, tape = forward(model, feats, record=True)
                        value, dprobs = loss_mod.unlabelled_loss_grad(
                            probs, labels, uniform, 1.0)
                        grad += gradients(model, tape, dprobs) * coeff
                        unl_terms.append(value)
                        epsilons.append(1.0)
                        important_counts.append(int(labels.sum()))
                elif cfg.method == "MT":
                    t_model = _teacher_model(cfg, model, teacher)
                    for img in unl_batch:
                        rng = derive_rng(cfg.seed, "ranks", epoch, img.image_id)
                        sample = baselines.uniform_person_sample(len(img), cfg.k, rng)
                        feats = img.feature_matrix()[sample]
                        targets = forward(t_model, feats)
                        probs, tape = forward(model, feats, record=True)
                        value, dprobs = loss_mod.teacher_loss_grad(probs, targets)
                        grad += gradients(model, tape, dprobs) * coeff
                        unl_terms.append(value)
                        epsilons.append(1.0)
                        important_counts.append(int(baselines.pl_labels(targets[:, 1]).sum()))
                else:  # LP baseline
                    uniform = np.full(cfg.k, 1.0 / cfg.k)
                    samples, feat_blocks = [], []
                    for img in unl_batch:
                        rng = derive_rng(cfg.seed, "ranks", epoch, img.image_id)
                        sample = baselines.uniform_person_sample(len(img), cfg.k, rng)
                        samples.append(sample)
                        feat_blocks.append(img.feature_matrix()[sample])
                    shares = _lp_batch_scores(cfg, lab_batch, feat_blocks,
                                              lab_images, unl_images)
                    for feats, share in zip(feat_blocks, shares):
                        labels = baselines.pl_labels(share)
                        probs, tape = forward(model, feats, record=True)
                        value, dprobs = loss_mod.unlabelled_loss_grad(
                            probs, labels, uniform, 1.0)
                        grad += gradients(model, tape, dprobs) * coeff
                        unl_terms.append(value)
                        epsilons.append(1.0)
                        important_counts.append(int(labels.sum()))

            sgd_step(model, opt, grad, lr)
            if teacher is not None:
                baselines.ema_update(teacher, model.theta)

            breakdown = loss_mod.total_loss(lab_terms, unl_terms,
                                            lam if unl_terms else 0.0)
            step_labelled.append(breakdown.labelled_term)
            step_unlabelled.append(breakdown.unlabelled_term)
            step_total.append(breakdown.total)

        val_map = mean_ap(model, val) if len(val) else float("nan")
        record = EpochRecord(
            epoch=epoch, lr=lr, lam=lam,
            labelled_term=float(np.mean(step_labelled)),
            unlabelled_term=float(np.mean(step_unlabelled)),
            total=float(np.mean(step_total)),
            mean_epsilon=float(np.mean(epsilons)) if epsilons else 0.0,
            val_map=val_map,
            histogram=(pseudo_label_histogram(important_counts)
                       if important_counts else dict(_ZERO_HIST)),
        )
        history.records.append(record)
        if len(val) and val_map >= best_val:
            best_val = val_map
            best_theta = model.theta.copy()
            history.best_epoch = epoch
            history.best_val_map = val_map

    history.final_model = model.copy()
    if not len(val):
        best_theta = model.theta.copy()
        history.best_epoch = cfg.epochs - 1
    best = RelationModel(model.feature_dim, cfg.hidden, best_theta)
    return best, history


@dataclass(frozen=True)
class AblationCell:
    """Aggregate over seeds for one (variant, labelled-fraction) pair."""

    variant: str
    fraction: float
    seeds: tuple[int, ...]
    test_maps: tuple[float, ...]
    map_mean: float
    map_std: float


def run_ablation(cfg: TrainingConfig, labelled: Dataset, unlabelled: Dataset,
                 val: Dataset, test: Dataset, variants, seeds,
                 fractions=(1.0,), threads: int = 1) -> list[AblationCell]:
    """Train every (variant, fraction, seed) combination and aggregate test mAP.

    Fractions below 1 randomly demote labelled images into the unlabelled pool
    (split seed = run seed). ``threads`` > 1 runs independent jobs in a thread
    pool; results are ordered by (variant, fraction) regardless.
    """
    variants = list(variants)
    seeds = list(seeds)
    fractions = list(fractions)
    if not variants or not seeds or not fractions:
        raise TrainError("ablation needs at least one variant, seed and fraction")
    for v in variants:
        if v not in METHODS:
            raise TrainError(f"unknown ablation variant {v!r}")
    combined = Dataset(tuple(labelled.images) + tuple(unlabelled.images),
                       labelled.feature_dim)

    def one_run(variant: str, fraction: float, seed: int) -> float:
        from .core import split_dataset

        if fraction < 1.0:
            lab_f, pool = split_dataset(combined, fraction, seed)
        else:
            lab_f, pool = labelled, unlabelled
        run_cfg = replace(cfg, method=variant, seed=seed)
        best, _ = train(run_cfg, lab_f, pool, val)
        return mean_ap(best, test)

    jobs = [(v, f, s) for v in variants for f in fractions for s in seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: one_run(*j), jobs))
    else:
        results = [one_run(*job) for job in jobs]

    cells = []
    i = 0
    for v in variants:
        for f in fractions:
            maps = tuple(results[i:i + len(seeds)])
            i += len(seeds)
            cells.append(AblationCell(v, float(f), tuple(seeds), maps,
                                      float(np.mean(maps)), float(np.std(maps))))
    return cells


def write_ablation_csv(cells, path) -> None:
    """Aggregate table: one row per (variant, fraction) cell."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "fraction", "n_seeds", "map_mean", "map_std"])
        for c in cells:
            writer.writerow([c.variant, repr(c.fraction), len(c.seeds),
                             repr(c.map_mean), repr(c.map_std)])


def write_ablation_runs_csv(cells, path) -> None:
    """Per-run table: one row per (variant, fraction, seed)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "fraction", "seed", "test_map"])
        for c in cells:
            for seed, value in zip(c.seeds, c.test_maps):
                writer.writerow([c.variant, repr(c.fraction), seed, repr(value)])
