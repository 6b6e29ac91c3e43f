"""Command-line surface: synth / train / evaluate / diagnose-features /
screen / visualize, all deterministic given (config, seed).

Exit codes: 0 success, 2 config error, 3 I/O error, 4 training failure,
5 undefined metric, 6 infeasible calibration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, corpus, debias, ensemble, evalkit, nets, screen, spectro
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    GenerationError,
    InfeasiblePrecisionError,
    InfeasibleRecallError,
    InvalidArgumentError,
    TrainingError,
    UndefinedMetricError,
)
from .training import (
    SpectroDataset,
    Variant,
    predict_scores,
    predictions_from_scores,
    train_model,
)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4
EXIT_METRIC = 5
EXIT_CALIBRATION = 6


def _write_provenance(out_dir: str, command: str, cfg: RunConfig, argv: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    import torch

    record = {
        "command": command,
        "argv": argv,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "versions": {
            "fairvoice": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)
        f.write("\n")


def _load_dataset(manifest_path: str, cfg: RunConfig) -> SpectroDataset:
    manifest = corpus.DatasetManifest.load_csv(manifest_path)
    return SpectroDataset.from_manifest(manifest, cfg.mel)


def cmd_synth(args, cfg: RunConfig) -> int:
    if cfg.synth is None:
        raise ConfigError("synth command needs a [synth] section in the config")
    out_dir = args.out or os.path.join(cfg.output_dir, "corpus")
    manifest = corpus.generate_synthetic(cfg.synth, out_dir)
    train_m, test_m = corpus.split_train_test(manifest, args.split_ratio, cfg.seed)
    train_m.save_csv(os.path.join(out_dir, "train.csv"))
    test_m.save_csv(os.path.join(out_dir, "test.csv"))
    stats = corpus.manifest_stats(manifest)
    print(f"generated {len(manifest)} samples in {out_dir}")
    for g in corpus.AGE_GROUPS:
        r = stats.ratios[g]
        print(
            f"  {g}: PD={stats.counts[(g, corpus.PD)]} HC={stats.counts[(g, corpus.HC)]} "
            f"ratio={'undefined' if r is None else f'{r:.4f}'}"
        )
    _write_provenance(out_dir, "synth", cfg, sys.argv[1:])
    return 0


def _resolve_train_manifest(args, cfg: RunConfig) -> str:
    path = args.manifest or cfg.train_manifest or os.path.join(
        cfg.output_dir, "corpus", "train.csv"
    )
    if not os.path.exists(path):
        raise ConfigError(f"train manifest not found: {path}")
    return path


def cmd_train(args, cfg: RunConfig) -> int:
    variant = Variant(args.variant)
    manifest = corpus.DatasetManifest.load_csv(_resolve_train_manifest(args, cfg))
    if variant is Variant.RESAMPLE:
        before = corpus.manifest_stats(manifest)
        manifest = corpus.oversample_young_pd(manifest, seed=cfg.seed)
        after = corpus.manifest_stats(manifest)
        print(
            f"resampled young PD {before.counts[(corpus.YOUNG, corpus.PD)]} -> "
            f"{after.counts[(corpus.YOUNG, corpus.PD)]} "
            f"(young ratio {after.ratios[corpus.YOUNG]:.4f}, "
            f"elderly ratio {after.ratios[corpus.ELDERLY]:.4f})"
        )
    dataset = SpectroDataset.from_manifest(manifest, cfg.mel)
    out_dir = args.out or os.path.join(cfg.output_dir, "models")
    os.makedirs(out_dir, exist_ok=True)

    n = args.ensemble
    if n == 1:
        result = train_model(
            dataset, cfg.backbone, cfg.train, variant,
            mask_cfg=cfg.mask, adv_cfg=cfg.adversarial,
        )
        ckpt = os.path.join(out_dir, f"{variant.value}.ckpt")
        nets.save_checkpoint(result.model, ckpt)
        log_path = os.path.join(out_dir, f"{variant.value}.losses.json")
        with open(log_path, "w", encoding="utf-8") as f:
            json.dump(result.epoch_losses, f, indent=2)
        print(f"saved {ckpt}")
    else:
        bundle, results = ensemble.train_ensemble(
            dataset, cfg.backbone, cfg.train, variant, n=n,
            base_seed=cfg.seed, mask_cfg=cfg.mask,
            adv_cfg=cfg.adversarial,
        )
        bundle_dir = ensemble.save_bundle(bundle, out_dir)
        with open(os.path.join(bundle_dir, "losses.json"), "w", encoding="utf-8") as f:
            json.dump([r.epoch_losses for r in results], f, indent=2)
        print(f"saved {n}-member bundle in {bundle_dir}")
    _write_provenance(out_dir, "train", cfg, sys.argv[1:])
    return 0


def _score_artifact(path: str, dataset: SpectroDataset, cfg: RunConfig,
                    variant_flag: str | None) -> tuple[np.ndarray, str, str]:
    """Score with either a single checkpoint or a bundle directory."""
    if os.path.isdir(path):
        bundle = ensemble.load_bundle(path)
        scores = ensemble.predict_median(bundle, dataset, cfg.mask)
        return scores, bundle.variant.value, bundle.kind.value
    model = nets.load_checkpoint(path)
    variant = Variant(variant_flag) if variant_flag else Variant.PLAIN
    return predict_scores(model, dataset, variant, cfg.mask), variant.value, model.kind.value


def _save_predictions(preds, subject_ids, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "subject_id", "age_group", "label", "score"])
        for row, subj in zip(preds.rows, subject_ids):
            w.writerow([row.sample_id, subj, row.age_group, row.label, f"{row.score:.17g}"])


def _load_predictions(path) -> tuple[evalkit.PredictionSet, dict[str, str]]:
    rows, subject_of = [], {}
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            rows.append(
                evalkit.PredictionRow(
                    rec["sample_id"], rec["age_group"], rec["label"], float(rec["score"])
                )
            )
            subject_of[rec["sample_id"]] = rec.get("subject_id", rec["sample_id"])
    return evalkit.PredictionSet(rows), subject_of


def cmd_evaluate(args, cfg: RunConfig) -> int:
    test_path = args.manifest or cfg.test_manifest or os.path.join(
        cfg.output_dir, "corpus", "test.csv"
    )
    if not os.path.exists(test_path):
        raise ConfigError(f"test manifest not found: {test_path}")
    dataset = _load_dataset(test_path, cfg)
    scores, variant, backbone = _score_artifact(args.model, dataset, cfg, args.variant)
    preds = predictions_from_scores(dataset, scores)
    report = evalkit.grouped_report(
        preds, variant=variant, backbone=backbone, seed_info={"seed": cfg.seed}
    )
    out_dir = args.out or os.path.join(cfg.output_dir, "eval")
    os.makedirs(out_dir, exist_ok=True)
    evalkit.export_report(report, os.path.join(out_dir, f"{variant}.report.json"))
    _save_predictions(preds, dataset.subject_ids,
                      os.path.join(out_dir, f"{variant}.predictions.csv"))
    for name, subset in (
        ("all", preds),
        ("young", preds.restrict(corpus.YOUNG)),
        ("elderly", preds.restrict(corpus.ELDERLY)),
    ):
        labels, s = subset.labels_scores()
        curve = evalkit.pr_curve(labels, s)
        curve.save_txt(os.path.join(out_dir, f"{variant}.pr_{name}.txt"))
        curve.save_png(os.path.join(out_dir, f"{variant}.pr_{name}.png"), label=name)
    print(
        f"AUPRC average={report.auprc_average:.4f} young={report.auprc_young:.4f} "
        f"elderly={report.auprc_elderly:.4f} delta={report.delta:.4f}"
    )
    _write_provenance(out_dir, "evaluate", cfg, sys.argv[1:])
    return 0


def cmd_diagnose_features(args, cfg: RunConfig) -> int:
    model = nets.load_checkpoint(args.checkpoint)
    cells: dict[tuple[str, str, str], np.ndarray] = {}
    for split_name, manifest_path in (("train", args.train_manifest),
                                      ("test", args.test_manifest)):
        dataset = _load_dataset(manifest_path, cfg)
        feats = []
        for start in range(0, len(dataset), cfg.train.batch_size):
            idx = np.arange(start, min(start + cfg.train.batch_size, len(dataset)))
            feats.append(nets.extract_final_features(model, dataset.images(idx)))
        feats = np.concatenate(feats) if feats else np.empty((0, model.feature_width))
        for group in corpus.AGE_GROUPS:
            for label in (corpus.PD, corpus.HC):
                sel = [
                    i for i in range(len(dataset))
                    if dataset.age_groups[i] == group and dataset.diagnoses[i] == label
                ]
                cells[(split_name, group, label)] = feats[sel]
    report = evalkit.feature_distance(cells)
    out_dir = args.out or os.path.join(cfg.output_dir, "diagnostics")
    os.makedirs(out_dir, exist_ok=True)
    payload = {f"{s}/{g}": d for (s, g), d in report.distances.items()}
    with open(os.path.join(out_dir, "feature_distance.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, (split_name, group) in zip(
        axes.ravel(), sorted(report.distances)
    ):
        for label in (corpus.PD, corpus.HC):
            ax.plot(report.sorted_means[(split_name, group, label)], label=label)
        ax.set_title(f"{split_name} / {group} (L1={report.distances[(split_name, group)]:.2f})")
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "feature_distance.png"), dpi=120)
    plt.close(fig)
    for key, d in sorted(report.distances.items()):
        print(f"{key[0]}/{key[1]}: L1 = {d:.4f}")
    _write_provenance(out_dir, "diagnose-features", cfg, sys.argv[1:])
    return 0


def cmd_screen(args, cfg: RunConfig) -> int:
    out_dir = args.out or os.path.join(cfg.output_dir, "screening")
    os.makedirs(out_dir, exist_ok=True)
    if args.action == "calibrate":
        preds, _ = _load_predictions(args.predictions)
        young = preds.restrict(corpus.YOUNG)
        policy = screen.calibrate(young, cfg.policy)
        payload = {
            "t1": policy.t1,
            "t2": policy.t2,
            "achieved_precision_at_t1": policy.achieved_precision_at_t1,
            "achieved_recall_at_t2": policy.achieved_recall_at_t2,
            "collapsed": policy.collapsed,
            "precision_target": cfg.policy.precision_target,
            "recall_target": cfg.policy.recall_target,
        }
        path = os.path.join(out_dir, "policy.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
        print(
            f"policy: t1={policy.t1:.4f} (precision {policy.achieved_precision_at_t1:.4f}) "
            f"t2={policy.t2:.4f} (recall {policy.achieved_recall_at_t2:.4f})"
        )
    else:
        with open(args.policy, encoding="utf-8") as f:
            p = json.load(f)
        policy = screen.TwoStepPolicy(
            t1=p["t1"], t2=p["t2"],
            achieved_precision_at_t1=p["achieved_precision_at_t1"],
            achieved_recall_at_t2=p["achieved_recall_at_t2"],
            collapsed=p.get("collapsed", False),
        )
        preds, subject_of = _load_predictions(args.predictions)
        young = preds.restrict(corpus.YOUNG)
        scores = {subject_of[r.sample_id]: r.score for r in young.rows}
        outcomes = screen.apply_policy(policy, scores)
        path = os.path.join(out_dir, "outcomes.csv")
        screen.save_outcomes(outcomes, path)
        summary = screen.policy_report(policy, young)
        print(
            f"positive={summary.n_positive} high_risk={summary.n_high_risk} "
            f"negative={summary.n_negative} combined_recall={summary.combined_recall:.4f}"
        )
    _write_provenance(out_dir, "screen", cfg, sys.argv[1:])
    return 0


def cmd_visualize(args, cfg: RunConfig) -> int:
    model = nets.load_checkpoint(args.checkpoint)
    manifest = corpus.DatasetManifest.load_csv(args.manifest)
    wanted = set(args.samples.split(",")) if args.samples else None
    samples = [
        s for s in manifest.samples if wanted is None or s.sample_id in wanted
    ][: args.limit]
    out_dir = args.out or os.path.join(cfg.output_dir, "visualizations")
    os.makedirs(out_dir, exist_ok=True)
    for s in samples:
        wav, rate = corpus.load_waveform(s.audio_path)
        image = spectro.waveform_to_image(wav, rate, cfg.mel)
        sal, _ = debias.saliency_for_image(model, image)
        mask = debias.threshold_mask(sal.upsampled, cfg.mask.threshold)
        spectro.render_png(image, os.path.join(out_dir, f"{s.sample_id}.input.png"))
        debias.export_saliency_png(sal, os.path.join(out_dir, f"{s.sample_id}.saliency.png"))
        debias.export_mask_png(mask, os.path.join(out_dir, f"{s.sample_id}.mask.png"))
    print(f"wrote {len(samples)} triptychs to {out_dir}")
    _write_provenance(out_dir, "visualize", cfg, sys.argv[1:])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairvoice")
    parser.add_argument("--config", required=True, help="TOML run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus and 4:1 split")
    p.add_argument("--out")
    p.add_argument("--split-ratio", type=float, default=4.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model or ensemble")
    p.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    p.add_argument("--ensemble", type=int, default=1)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="grouped AUPRC report for a model/bundle")
    p.add_argument("--model", required=True, help="checkpoint file or bundle directory")
    p.add_argument("--manifest")
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   help="scoring variant for single checkpoints")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose-features", help="averaged-and-sorted feature L1 report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose_features)

    p = sub.add_parser("screen", help="calibrate or apply the two-step policy")
    p.add_argument("action", choices=["calibrate", "apply"])
    p.add_argument("--predictions", required=True, help="predictions CSV from evaluate")
    p.add_argument("--policy", help="policy JSON (for apply)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("visualize", help="input/saliency/mask PNG triptychs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--samples", help="comma-separated sample ids (default: first N)")
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, InvalidArgumentError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasiblePrecisionError, InfeasibleRecallError) as e:
        print(f"infeasible calibration: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except UndefinedMetricError as e:
        print(f"undefined metric: {e}", file=sys.stderr)
        return EXIT_METRIC
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (GenerationError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
