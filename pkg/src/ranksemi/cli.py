"""Command-line interface.

Subcommands: generate (synthetic datasets), train (one run -> checkpoint +
history), eval (checkpoint -> metrics report), ablate (variant sweep), audit
(pseudo-label and effectiveness-weight inspection). Exit codes: 0 success,
1 runtime failure (bad data, missing files), 2 usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import baselines, pseudolabel, weighting
from .core import DatasetError, load_dataset
from .metrics import evaluate, pseudo_label_histogram, write_evaluation_report
from .model import ModelError, load_model, save_model
from .seeding import derive_rng
from .synthgen import SynthSpec, read_noise_flags, write_synth
from .trainer import (METHODS, TrainError, TrainingConfig, apply_overrides,
                      parse_config, run_ablation, train, write_ablation_csv,
                      write_ablation_runs_csv, write_config, write_history_csv)

_DATA_FILES = ("labelled.jsonl", "unlabelled.jsonl", "val.jsonl", "test.jsonl")


def _threads_from_env() -> int:
    raw = os.environ.get("RANKSEMI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise TrainError(f"RANKSEMI_THREADS must be an integer, got {raw!r}")


def _load_config(args) -> TrainingConfig:
    cfg = parse_config(args.config) if args.config else TrainingConfig()
    overrides = list(args.set or [])
    if getattr(args, "method", None):
        overrides.append(f"method={args.method}")
    if getattr(args, "score_source", None):
        overrides.append(f"score_source={args.score_source}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return apply_overrides(cfg, overrides)


def _load_split(data_dir: str, name: str):
    return load_dataset(os.path.join(data_dir, name))


def cmd_generate(args) -> int:
    spec = SynthSpec(
        n_labelled=args.n_labelled, n_unlabelled=args.n_unlabelled,
        n_val=args.n_val, n_test=args.n_test, feature_dim=args.feature_dim,
        people_min=args.people_min, people_max=args.people_max,
        noise_fraction=args.noise_fraction, prominence_gap=args.prominence_gap,
        feature_noise=args.feature_noise, n_modes=args.n_modes,
        mode_scale=args.mode_scale, context_jitter=args.context_jitter,
        labelled_mode_bias=args.labelled_mode_bias,
        shared_direction=args.shared_direction, seed=args.seed,
    )
    write_synth(spec, args.out)
    print(f"wrote {', '.join(_DATA_FILES)} and noise_flags.csv to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    labelled = _load_split(args.data, "labelled.jsonl")
    unlabelled = _load_split(args.data, "unlabelled.jsonl")
    val = _load_split(args.data, "val.jsonl")
    os.makedirs(args.out, exist_ok=True)
    best, history = train(cfg, labelled, unlabelled, val)
    save_model(best, os.path.join(args.out, "checkpoint.json"))
    save_model(history.final_model, os.path.join(args.out, "final_model.json"))
    write_history_csv(history, os.path.join(args.out, "history.csv"))
    write_config(cfg, os.path.join(args.out, "effective_config.txt"))
    print(f"method={cfg.method} best_epoch={history.best_epoch} "
          f"best_val_map={history.best_val_map:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    test = load_dataset(args.test)
    report = evaluate(model, test, max_rank=args.cmc_ranks)
    write_evaluation_report(report, args.out)
    cmc_str = " ".join(f"{v:.4f}" for v in report.cmc)
    print(f"map={report.map:.4f} cmc=[{cmc_str}]")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    labelled = _load_split(args.data, "labelled.jsonl")
    unlabelled = _load_split(args.data, "unlabelled.jsonl")
    val = _load_split(args.data, "val.jsonl")
    test = _load_split(args.data, "test.jsonl")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    cells = run_ablation(cfg, labelled, unlabelled, val, test, variants, seeds,
                         fractions=fractions, threads=_threads_from_env())
    os.makedirs(args.out, exist_ok=True)
    write_ablation_csv(cells, os.path.join(args.out, "ablation.csv"))
    write_ablation_runs_csv(cells, os.path.join(args.out, "ablation_runs.csv"))
    for c in cells:
        print(f"{c.variant} fraction={c.fraction} map={c.map_mean:.4f}"
              f" +/- {c.map_std:.4f}")
    return 0


def cmd_audit(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.checkpoint)
    pool = load_dataset(args.unlabelled)
    noise = read_noise_flags(args.noise_flags) if args.noise_flags else {}
    os.makedirs(args.out, exist_ok=True)

    if cfg.method in ("ours", "ours_no_EW", "ours_no_ISW_EW"):
        assignments, counts, ew_rows = [], [], []
        for img in pool.images:
            rng = derive_rng(cfg.seed, "audit", img.image_id)
            a = pseudolabel.assign_pseudo_labels(model, img, cfg.alpha, cfg.k, rng)
            assignments.append(a)
            counts.append(len(a.important_indices))
            eps = weighting.effectiveness_weight(a.scores[a.sample_indices])
            ew_rows.append((img.image_id, eps, noise.get(img.image_id)))
        pseudolabel.write_pseudo_label_audit(
            assignments, os.path.join(args.out, "pseudo_labels.csv"))
        weighting.write_ew_audit(ew_rows, os.path.join(args.out, "ew.csv"))
    else:
        # threshold-style audit: label every person, no sampling
        assignments, counts = [], []
        for img in pool.images:
            scores = pseudolabel.importance_scores(model, img)
            labels = baselines.pl_labels(scores)
            smax = scores.max()
            ranking = scores / smax if smax > 0 else np.zeros_like(scores)
            assignments.append(pseudolabel.PseudoLabelAssignment(
                img.image_id, scores, ranking,
                tuple(int(i) for i in np.flatnonzero(labels == 1)),
                np.arange(len(img), dtype=np.int64), labels))
            counts.append(int(labels.sum()))
        pseudolabel.write_pseudo_label_audit(
            assignments, os.path.join(args.out, "pseudo_labels.csv"))

    hist = pseudo_label_histogram(counts)
    import csv as _csv
    import json as _json
    with open(os.path.join(args.out, "histogram.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["bucket", "images"])
        for bucket, count in hist.items():
            writer.writerow([bucket, count])
    with open(os.path.join(args.out, "histogram.json"), "w", encoding="utf-8") as fh:
        _json.dump(hist, fh, indent=2)
        fh.write("\n")
    print(" ".join(f"{k}:{v}" for k, v in hist.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranksemi",
        description="Semi-supervised important-people detection on person "
                    "feature sets: ranking-based pseudo-labels with importance "
                    "and effectiveness weighting.")
    sub = parser.add_subparsers(dest="command", required=True)

    d = SynthSpec()  # argparse defaults track the dataclass defaults
    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--n-labelled", type=int, default=d.n_labelled)
    p.add_argument("--n-unlabelled", type=int, default=d.n_unlabelled)
    p.add_argument("--n-val", type=int, default=d.n_val)
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--feature-dim", type=int, default=d.feature_dim)
    p.add_argument("--people-min", type=int, default=d.people_min)
    p.add_argument("--people-max", type=int, default=d.people_max)
    p.add_argument("--noise-fraction", type=float, default=d.noise_fraction)
    p.add_argument("--prominence-gap", type=float, default=d.prominence_gap)
    p.add_argument("--feature-noise", type=float, default=d.feature_noise)
    p.add_argument("--n-modes", type=int, default=d.n_modes)
    p.add_argument("--mode-scale", type=float, default=d.mode_scale)
    p.add_argument("--context-jitter", type=float, default=d.context_jitter)
    p.add_argument("--labelled-mode-bias", type=float, default=d.labelled_mode_bias)
    p.add_argument("--shared-direction", type=float, default=d.shared_direction)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--data", default="data", help="directory with *.jsonl splits")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--score-source", choices=baselines.SCORE_SOURCES)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labelled split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="labelled JSONL file")
    p.add_argument("--out", default="eval_out")
    p.add_argument("--cmc-ranks", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep method variants over seeds")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="ablation_out")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--variants",
                   default="ours,ours_no_EW,ours_no_ISW_EW,ours_no_RankS_ISW_EW,supervised")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--fractions", default="1.0")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("audit", help="dump pseudo-label and weighting statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--unlabelled", required=True, help="unlabelled JSONL file")
    p.add_argument("--out", default="audit_out")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--score-source", choices=baselines.SCORE_SOURCES)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-flags", help="noise sidecar CSV to join into the EW audit")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ModelError, TrainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
