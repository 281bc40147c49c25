"""Acceptance suite: one test per release criterion, each printing a single
PASS/FAIL line with the measured quantities.

Criteria 5, 6, 7 and 9 share the session-cached default-benchmark runs from
``conftest.bench_runs`` (same five seeds across criteria), so the expensive
training happens once per (method, score source, seed).
"""

import math
import time

import numpy as np
import pytest

from conftest import smoke_config
from ranksemi import baselines, loss, pseudolabel, weighting
from ranksemi.core import Dataset, EventImage, PersonInstance
from ranksemi.metrics import average_precision, evaluate
from ranksemi.model import forward, gradients, importance_probs, init_model
from ranksemi.seeding import derive_rng
from ranksemi.trainer import TrainingConfig, train

SEEDS = (0, 1, 2, 3, 4)


def _report(criterion: int, ok: bool, detail: str) -> None:
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# --------------------------------------------------------------- criterion 1

def test_criterion_1_formula_exactness():
    """Each closed-form quantity matches an independently hand-computed value
    to 1e-9 absolute."""
    e = math.e
    checks = [
        ("ISW", weighting.importance_score_weights(np.array([1.0, 0.0])),
         np.array([e / (e + 1.0), 1.0 / (e + 1.0)])),
        ("EW", weighting.effectiveness_weight(np.array([0.75, 0.25])),
         1.0 - (-(0.75 * math.log(0.75) + 0.25 * math.log(0.25))) / math.log(2.0)),
        ("lambda", loss.lambda_schedule(7, 35, 1.0), 0.2),
        ("lambda_max", loss.lambda_schedule(40, 35, 0.6), 0.6),
        ("lr", loss.learning_rate(19, 0.001, 20, 0.5), 0.001),
        ("lr_decayed", loss.learning_rate(40, 0.001, 20, 0.5), 0.00025),
        ("CE_uniform", loss.labelled_loss(np.full((4, 2), 0.5),
                                          np.array([1, 0, 0, 1])),
         math.log(2.0)),
        ("CE_quarter", loss.labelled_loss(np.array([[0.75, 0.25]]),
                                          np.array([1])),
         -math.log(0.25)),
        ("MSE_consistency", baselines.mt_loss(np.array([[1.0, 0.0]]),
                                              np.array([[0.0, 1.0]])), 2.0),
        ("unlabelled", loss.unlabelled_loss(np.full((2, 2), 0.5),
                                            np.array([1, 0]),
                                            np.array([0.5, 0.5]), 1.0), 0.5),
        ("total", loss.total_loss([math.log(2.0)], [0.5], 1.0).total,
         math.log(2.0) + 0.5),
    ]
    errs = {name: float(np.max(np.abs(np.asarray(got) - np.asarray(want))))
            for name, got, want in checks}
    worst = max(errs, key=errs.get)
    _report(1, all(v <= 1e-9 for v in errs.values()),
            f"max abs error {errs[worst]:.2e} ({worst}); {len(checks)} formulas")


# --------------------------------------------------------------- criterion 2

def test_criterion_2_ranking_never_empties(bench_data, bench_runs):
    """Ranking-based labelling marks at least one person important on every
    image, while plain 0.5-thresholding goes all-non-important on most images
    early in training."""
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    ranks_empty = 0
    for i in range(1000):
        z = rng.uniform(0.0, 1.0, size=rng.integers(2, 13))
        _, labels, important, _ = pseudolabel.rank_and_label(
            z, 0.99, 8, np.random.default_rng(i))
        if not labels.any() or not important:
            ranks_empty += 1

    _, early_model, _ = bench_runs("supervised", 0, epochs=3)
    pool = bench_data["unl"].unlabelled_images()
    pl_empty = 0
    for img in pool:
        z = importance_probs(early_model, img.feature_matrix())
        if not baselines.pl_labels(z).any():
            pl_empty += 1
        rng = derive_rng(0, "acceptance-2", img.image_id)
        _, labels, important, _ = pseudolabel.rank_and_label(z, 0.99, 8, rng)
        if not labels.any() or not important:
            ranks_empty += 1
    rate = pl_empty / len(pool)
    elapsed = time.monotonic() - t0
    _report(2, ranks_empty == 0 and rate > 0.5 and elapsed < 60.0,
            f"ranking all-non-important 0/{1000 + len(pool)}, threshold "
            f"all-non-important {rate:.1%} of {len(pool)} (needs > 50%), "
            f"{elapsed:.0f}s")


# --------------------------------------------------------------- criterion 3

def _kink_free_instance(rng):
    """A model/input pair whose pre-activations stay away from ReLU kinks so
    central differences are trustworthy."""
    while True:
        d, h, n = int(rng.integers(3, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        model = init_model(d, h, int(rng.integers(2 ** 31)))
        model.theta[:] = rng.normal(scale=0.8, size=model.theta.shape)
        x = rng.normal(size=(n, d))
        _, tape = forward(model, x, record=True)
        margin = min(np.abs(tape.e_pre).min(),
                     np.abs(tape.p_pre).min() if tape.p_pre is not None else 1.0)
        if margin > 1e-2:
            return model, x


def test_criterion_3_gradients_match_finite_differences():
    t0 = time.monotonic()
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        model, x = _kink_free_instance(rng)
        labels = (np.arange(x.shape[0]) == 0).astype(np.int64)
        probs, tape = forward(model, x, record=True)
        _, dprobs = loss.labelled_loss_grad(probs, labels)
        analytic = gradients(model, tape, dprobs)
        h = 1e-5
        numeric = np.empty_like(analytic)
        for p in range(model.theta.shape[0]):
            orig = model.theta[p]
            model.theta[p] = orig + h
            up = loss.labelled_loss(forward(model, x), labels)
            model.theta[p] = orig - h
            dn = loss.labelled_loss(forward(model, x), labels)
            model.theta[p] = orig
            numeric[p] = (up - dn) / (2.0 * h)
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    _report(3, worst < 1e-4 and elapsed < 60.0,
            f"max relative error {worst:.2e} over 50 models (< 1e-4), {elapsed:.0f}s")


# --------------------------------------------------------------- criterion 4

def _brute_force_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    hits, precisions = 0, []
    for rank, j in enumerate(order, start=1):
        if labels[j] == 1:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / len(precisions)


def test_criterion_4_metric_oracle_equivalence():
    rng = np.random.default_rng(42)
    exact = 0
    for _ in range(200):
        n = int(rng.integers(2, 11))
        labels = np.zeros(n, dtype=np.int64)
        labels[rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)] = 1
        scores = np.round(rng.uniform(size=n), 3)  # rounding induces ties
        if average_precision(scores, labels) == _brute_force_ap(
                scores.tolist(), labels.tolist()):
            exact += 1

    monotone = terminal = 0
    for i in range(20):
        mrng = np.random.default_rng(1000 + i)
        model = init_model(4, 3, i)
        images = []
        for j in range(8):
            n = int(mrng.integers(2, 7))
            feats = mrng.normal(size=(n, 4))
            lbl = np.zeros(n, dtype=np.int64)
            lbl[int(mrng.integers(n))] = 1
            persons = tuple(PersonInstance(feats[p], int(lbl[p]))
                            for p in range(n))
            images.append(EventImage(f"im{j}", True, persons))
        report = evaluate(model, Dataset(tuple(images), 4), max_rank=6)
        if np.all(np.diff(report.cmc) >= 0.0):
            monotone += 1
        if report.cmc[-1] == 1.0:
            terminal += 1
    _report(4, exact == 200 and monotone == 20 and terminal == 20,
            f"AP oracle exact on {exact}/200 instances; CMC monotone "
            f"{monotone}/20, terminal-1 {terminal}/20")


# --------------------------------------------------------------- criterion 5

def test_criterion_5_semi_supervised_gain(bench_runs):
    t0 = time.monotonic()
    sup = np.array([bench_runs("supervised", s)[0] for s in SEEDS])
    ours = np.array([bench_runs("ours", s)[0] for s in SEEDS])
    elapsed = time.monotonic() - t0
    gain = float(np.mean(ours - sup))
    _report(5, gain >= 0.02 and elapsed < 600.0,
            f"mean test-mAP gain {gain:+.4f} over {len(SEEDS)} seeds "
            f"(needs >= +0.02): ours {ours.mean():.4f} vs supervised "
            f"{sup.mean():.4f}; {elapsed:.0f}s (< 600s)")


# --------------------------------------------------------------- criterion 6

def test_criterion_6_ablation_ordering(bench_runs):
    chain = ["ours", "ours_no_EW", "ours_no_ISW_EW", "ours_no_RankS_ISW_EW"]
    means = {m: float(np.mean([bench_runs(m, s)[0] for s in SEEDS]))
             for m in chain}
    ordered = all(means[chain[i]] >= means[chain[i + 1]] - 0.005
                  for i in range(len(chain) - 1))
    span = means[chain[0]] - means[chain[-1]]
    _report(6, ordered and span >= 0.015,
            "mean mAP " + " >= ".join(f"{means[m]:.4f}" for m in chain)
            + f"; span {span:+.4f} (needs >= +0.015, adjacent slack 0.005)")


# --------------------------------------------------------------- criterion 7

def test_criterion_7_effectiveness_weight_flags_noise(bench_data, bench_runs):
    _, _, hist = bench_runs("ours", 0)
    final = hist.final_model
    noise_flags = bench_data["noise"]
    eps = {True: [], False: []}
    for img in bench_data["unl"].unlabelled_images():
        rng = derive_rng(0, "audit", img.image_id)
        a = pseudolabel.assign_pseudo_labels(final, img, 0.99, 8, rng)
        eps[noise_flags[img.image_id]].append(
            weighting.effectiveness_weight(a.scores[a.sample_indices]))
    gap = float(np.mean(eps[False]) - np.mean(eps[True]))
    _report(7, gap >= 0.1,
            f"final-epoch mean eps: clean {np.mean(eps[False]):.4f}, noise "
            f"{np.mean(eps[True]):.4f}, gap {gap:+.4f} (needs >= +0.1)")


# --------------------------------------------------------------- criterion 8

def test_criterion_8_invariance_suite(smoke_data):
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    failures = []

    model = init_model(6, 5, 99)
    x = rng.normal(size=(7, 6))
    perm = rng.permutation(7)
    if not np.allclose(forward(model, x[perm]), forward(model, x)[perm],
                       atol=1e-12):
        failures.append("permutation equivariance")

    z = rng.uniform(0.05, 1.0, size=9)
    base = pseudolabel.rank_and_label(z, 0.99, 8, np.random.default_rng(3))
    scaled = pseudolabel.rank_and_label(z * 37.5, 0.99, 8,
                                        np.random.default_rng(3))
    if not (np.array_equal(base[0], scaled[0])
            and np.array_equal(base[1], scaled[1])
            and base[2] == scaled[2]):
        failures.append("ranking scale invariance")

    if abs(weighting.effectiveness_weight(z[:8])
           - weighting.effectiveness_weight(z[:8] * 12.0)) > 1e-12:
        failures.append("eps scale invariance")

    scores = rng.uniform(size=10)
    labels = (rng.uniform(size=10) < 0.4).astype(np.int64)
    labels[0] = 1
    if average_precision(scores, labels) != average_precision(
            np.exp(3.0 * scores), labels):
        failures.append("AP monotone-transform invariance")

    args = (smoke_data["lab"], smoke_data["unl"], smoke_data["val"])
    ours, _ = train(smoke_config(method="ours", lambda_max=0.0), *args)
    sup, _ = train(smoke_config(method="supervised"), *args)
    if not np.array_equal(ours.theta, sup.theta):
        failures.append("lambda=0 bitwise equality")

    elapsed = time.monotonic() - t0
    _report(8, not failures and elapsed < 60.0,
            f"5/5 invariances hold, {elapsed:.1f}s" if not failures
            else f"failed: {', '.join(failures)}")


# --------------------------------------------------------------- criterion 9

@pytest.mark.parametrize("source", ["softmax", "MT", "LP"])
def test_criterion_9_score_source_stability(bench_runs, source):
    sup = np.array([bench_runs("supervised", s)[0] for s in SEEDS])
    ours = np.array([bench_runs("ours", s, score_source=source)[0]
                     for s in SEEDS])
    gain = float(np.mean(ours - sup))
    _report(9, gain >= 0.02,
            f"score_source={source}: mean gain {gain:+.4f} over {len(SEEDS)} "
            f"seeds (needs >= +0.02)")
