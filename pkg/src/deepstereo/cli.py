"""Command-line entry point.

Exit codes: 0 success, 2 configuration/contract error, 3 I/O error,
4 numeric fault, 5 verification failure. Every failure prints one
machine-parseable line to stderr.
"""

import argparse
import os
import sys

import numpy as np

from . import runconfig
from .baseline import BaselineConfig, match_stereo
from .disparity import MetricsReport
from .errors import ConfigurationError, DeepStereoError, InputOutputError, VerificationFailure
from .fileio import read_pgm, write_disparity_png, write_pfm, write_png
from .gradcheck import available_modules, run_gradient_checks
from .pipeline import build_model
from .synthdata import load_dataset, write_dataset
from .trainer import (
    checkpoint_from_model,
    evaluate_model,
    install_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
)

TABLE_COLUMNS = ("error>1px", "error>3px", "MAE(px)", "T(ms)")


def _load_run_config(path):
    if path is None:
        return runconfig.RunConfig().validate()
    return runconfig.load(path)


def _model_from_checkpoint(path):
    checkpoint = load_checkpoint(path)
    if not checkpoint.config:
        raise ConfigurationError(f"checkpoint {path!r} carries no config echo")
    run = runconfig.from_dict(checkpoint.config)
    model = build_model(run.backbone, run.aggregation, run.seed)
    state = install_checkpoint(model, checkpoint)
    return model, run, state, checkpoint


def _read_image(path):
    if not os.path.isfile(path):
        raise InputOutputError(f"image {path!r} does not exist")
    return read_pgm(path)


def format_table(rows):
    """Aligned text table: label column plus the four metric columns."""
    header = f"{'model':<22}" + "".join(f"{c:>11}" for c in TABLE_COLUMNS)
    lines = [header]
    for label, report in rows:
        cells = (
            f"{report.err_gt_1px:.2f}",
            f"{report.err_gt_3px:.2f}",
            f"{report.mae:.4f}",
            f"{report.eval_time_s * 1000.0:.1f}",
        )
        lines.append(f"{label:<22}" + "".join(f"{c:>11}" for c in cells))
    return "\n".join(lines)


ABLATION_FLAGS = {
    "guidance": "disable_guidance",
    "proposal": "disable_proposal",
    "aggregation": "disable_aggregation",
}


def _evaluate_with_ablation(model, dataset, ablation=None):
    config = model.aggregator.config
    flag = ABLATION_FLAGS[ablation] if ablation else None
    previous = getattr(config, flag) if flag else None
    if flag:
        setattr(config, flag, True)
    try:
        report, per_sample = evaluate_model(model, dataset)
    finally:
        if flag:
            setattr(config, flag, previous)
    return report, per_sample


# --- commands ---------------------------------------------------------------


def cmd_gen_data(args):
    run = _load_run_config(args.config)
    write_dataset(args.out, run.scene, args.count, force=args.force)
    runconfig.write_echo(args.out, run)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args):
    run = _load_run_config(args.config)
    dataset = load_dataset(args.data)
    model = build_model(run.backbone, run.aggregation, run.seed)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train.log")
    with open(log_path, "w", encoding="ascii") as log_file:
        records, state = train(
            model, dataset, run.train, log_file=log_file,
            eval_dataset=dataset if run.train.eval_interval > 0 else None,
        )
    checkpoint_path = os.path.join(args.out, "checkpoint.ckpt")
    echo = runconfig.to_dict(run)
    save_checkpoint(
        checkpoint_path,
        checkpoint_from_model(model, state, run.train.iterations, echo),
    )
    runconfig.write_echo(args.out, run)
    print(f"trained {run.train.iterations} iterations; final loss {records[-1].loss:.6f}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"log: {log_path}")
    return 0


def cmd_eval(args):
    model, _, _, _ = _model_from_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    rows = []
    labels = ["full"] + [f"no-{a}" for a in (args.ablate or [])]
    variants = [None] + list(args.ablate or [])
    for label, ablation in zip(labels, variants):
        report, _ = _evaluate_with_ablation(model, dataset, ablation)
        rows.append((label, report))
        print(f"{label}: {report.line()}")
    print(format_table(rows))
    return 0


def cmd_infer(args):
    model, run, _, _ = _model_from_checkpoint(args.checkpoint)
    left = _read_image(args.left)
    right = _read_image(args.right)
    from .trainer import inference_mode

    with inference_mode(model):
        disparity = model.predict(left, right)
    os.makedirs(args.out, exist_ok=True)
    pfm_path = os.path.join(args.out, "disparity.pfm")
    png_path = os.path.join(args.out, "disparity.png")
    write_pfm(pfm_path, disparity)
    write_disparity_png(png_path, disparity, run.backbone.max_disparity)
    runconfig.write_echo(args.out, run)
    print(f"disparity range [{disparity.min():.3f}, {disparity.max():.3f}]")
    print(f"wrote {pfm_path} and {png_path}")
    return 0


def cmd_compare(args):
    model, run, _, _ = _model_from_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    rows = []
    for label, ablation in (
        ("full", None),
        ("no-guidance", "guidance"),
        ("no-proposal", "proposal"),
        ("no-aggregation", "aggregation"),
    ):
        report, _ = _evaluate_with_ablation(model, dataset, ablation)
        rows.append((label, report))
    rows.append(("baseline-census-box", _baseline_row(dataset, run.baseline, run.backbone)))
    table = format_table(rows)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "comparison.txt"), "w", encoding="ascii") as f:
            f.write(table + "\n")
        runconfig.write_echo(args.out, run)
    return 0


def _baseline_row(dataset, baseline_config, backbone_config):
    import time

    from .disparity import evaluate

    config = BaselineConfig(
        census_window=baseline_config.census_window,
        aggregation_window=baseline_config.aggregation_window,
        max_disparity=backbone_config.max_disparity,
    )
    errors = []
    elapsed = 0.0
    for sample in dataset:
        started = time.perf_counter()
        predicted = match_stereo(sample.left[:, :, 0], sample.right[:, :, 0], config)
        elapsed += time.perf_counter() - started
        errors.append(np.abs(predicted - sample.gt_disparity)[sample.mask])
    pooled = np.concatenate(errors)
    return MetricsReport(
        err_gt_1px=100.0 * float((pooled > 1.0).sum()) / pooled.size,
        err_gt_3px=100.0 * float((pooled > 3.0).sum()) / pooled.size,
        mae=float(pooled.mean()),
        eval_time_s=elapsed / len(dataset),
        valid_pixels=int(pooled.size),
    )


def cmd_grad_check(args):
    results = run_gradient_checks(module=args.module, instances=args.instances)
    if not results:
        raise ConfigurationError(f"no gradient checks in module {args.module!r}")
    failed = []
    for result in results:
        print(result.line())
        if not result.passed:
            failed.append(result.op)
    if failed:
        raise VerificationFailure(f"gradient checks failed: {', '.join(failed)}")
    print(f"all {len(results)} gradient checks passed")
    return 0


def cmd_visualize_guidance(args):
    model, _, _, _ = _model_from_checkpoint(args.checkpoint)
    left = _read_image(args.left)
    from .autodiff import no_grad
    from .pipeline import as_image_tensor

    with no_grad():
        summary = model.aggregator.guidance_summary(
            as_image_tensor(left, model.backbone_config.image_channels)
        )
    lo, hi = float(summary.min()), float(summary.max())
    scale = (summary - lo) / (hi - lo) if hi > lo else np.zeros_like(summary)
    write_png(args.out, np.round(scale * 255.0).astype(np.uint8))
    print(f"wrote {args.out} (score range [{lo:.4f}, {hi:.4f}])")
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepstereo",
        description="Stereo matching with learned two-stream cost aggregation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic stereogram dataset")
    p.add_argument("--config", help="TOML run config (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="TOML run config")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory (checkpoint, log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--ablate", action="append", choices=sorted(ABLATION_FLAGS),
        help="additionally evaluate with one stage disabled (repeatable)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict disparity for one stereo pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True, help="left (reference) PGM image")
    p.add_argument("--right", required=True, help="right (target) PGM image")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("compare", help="model, ablations, and classical baseline side by side")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="also write the table to this directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grad-check", help="finite-difference verification of every op")
    p.add_argument("--module", choices=available_modules(), help="restrict to one module")
    p.add_argument("--instances", type=int, default=20, help="random instances per op")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("visualize-guidance", help="grayscale PNG of the guidance scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True, help="reference PGM image")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_visualize_guidance)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except DeepStereoError as error:
        detail = " ".join(str(error).split())
        print(f"error kind={type(error).__name__} detail={detail!r}", file=sys.stderr)
        return error.exit_code
    except OSError as error:
        detail = " ".join(str(error).split())
        print(f"error kind=IOError detail={detail!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
