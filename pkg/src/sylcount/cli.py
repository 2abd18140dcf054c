"""Command-line surface.

Subcommands: extract, train, adapt, count, calibrate, evaluate,
experiment, plot, synth. Every run resolves one layered configuration
(defaults, then --config file, then --set overrides) and writes the
resolved snapshot next to its outputs, so rerunning from the snapshot with
the same seed reproduces the run bit for bit.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import load_wav
from .baseline_nets import init_params as blstm_init
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AppConfig, load_config, snapshot_config
from .corpus import (
    default_adaptation_sizes,
    load_manifest,
    load_split_plan,
    make_split_plan,
    save_split_plan,
    validate_split_plan,
)
from .envelope import (
    band_energy_envelope,
    calibrate,
    load_calibration,
    save_calibration,
)
from .errors import DataError, NumericError
from .evaluation import (
    UNADAPTED_LABEL,
    load_report,
    relative_error_pct,
    run_adaptation_experiment,
    save_report,
    export_report_csv,
    trace_accumulation,
)
from .features import extract_features, model_input
from .methods import EnvelopePeakMethod, NeuralCountMethod, loss_for_model
from .objectives import decode_ordinal
from .seeding import child_seed
from .sylnet import SylNet, forward
from .sylnet import init_params as sylnet_init
from .synth import generate_corpus
from .training import TrainLog, build_samples, train, adapt, train_val_split

log = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="config override, repeatable",
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="master seed; shorthand for setting train.seed and synth.seed",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="sylcount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="populate the feature cache for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a counting network on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--model", choices=("sylnet", "blstm"), default="sylnet")
    p.add_argument(
        "--ordinal",
        action="store_true",
        help="use the ordinal head, rank set to max training count + 1",
    )
    p.add_argument("--val-fraction", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="retrain a checkpoint's tunable partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ids", help="file with one utterance id per line (default: whole manifest)")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out", required=True, help="adapted checkpoint path (.npz)")
    _add_common(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("count", help="count syllables in WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+", help="WAV files or directories")
    p.add_argument("--out", help="also write the result lines to this file")
    _add_common(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("calibrate", help="fit envelope calibration on a labelled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="calibration path (.json)")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score one method on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ids", help="file with one utterance id per line (default: whole manifest)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--calibration")
    p.add_argument("--cache-dir", help="feature cache (checkpoint methods only)")
    p.add_argument("--out", required=True, help="evaluation report path (.json)")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="adaptation-curve experiment over methods")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", help="existing split plan (default: build one from config)")
    p.add_argument("--cache-dir", required=True)
    p.add_argument(
        "--method",
        action="append",
        required=True,
        metavar="NAME=PATH",
        help="checkpoint (.npz) or calibration (.json); repeatable",
    )
    p.add_argument("--out", required=True, help="experiment report path (.json)")
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="render an experiment report or an accumulation trace")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--report", help="experiment report (.json)")
    group.add_argument("--trace-checkpoint", help="checkpoint for a per-frame trace")
    p.add_argument("--wav", help="utterance to trace (with --trace-checkpoint)")
    p.add_argument("--ref-count", type=int, help="reference count line for the trace")
    p.add_argument("--out-dir", default=".")
    _add_common(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth", help="generate a synthetic burst corpus")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def _resolve_config(args) -> AppConfig:
    overrides = []
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"synth.seed={args.seed}"]
    overrides += args.set
    return load_config(args.config, overrides)


def _snapshot_near(config: AppConfig, out: Path) -> None:
    snapshot_config(config, out.parent / f"{out.stem}.config.json")


def _read_ids(path: str) -> list[str]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read id list {path}: {exc}") from exc
    ids = [line.strip() for line in lines if line.strip()]
    if not ids:
        raise DataError(f"id list {path} is empty")
    return ids


def _write_trainlog(train_log: TrainLog, base: Path) -> None:
    # wall time stays out of the file: rerunning from a snapshot must
    # reproduce every artifact byte for byte
    with open(base.parent / f"{base.stem}.trainlog.jsonl", "w") as f:
        for rec in train_log.epochs:
            f.write(
                json.dumps(
                    {
                        "epoch": rec.epoch,
                        "train_loss": rec.train_loss,
                        "val_error_pct": rec.val_error_pct,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(base.parent / f"{base.stem}.summary.json", "w") as f:
        json.dump(
            {
                "best_epoch": train_log.best_epoch,
                "best_val_error_pct": train_log.best_val_error_pct,
                "n_epochs": len(train_log.epochs),
                "stop_reason": train_log.stop_reason,
            },
            f,
            sort_keys=True,
            indent=2,
        )
        f.write("\n")


def cmd_extract(args, config: AppConfig) -> int:
    manifest = load_manifest(args.manifest)
    cache = Path(args.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    samples = build_samples(manifest, None, config.feature, cache)
    frames = sum(s.n_frames for s in samples)
    snapshot_config(config, cache / "extract.config.json")
    print(f"extracted {len(samples)} utterances ({frames} frames) into {cache}")
    return 0


def cmd_train(args, config: AppConfig) -> int:
    manifest = load_manifest(args.manifest)
    cache = Path(args.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    samples = build_samples(manifest, None, config.feature, cache)

    train_config = config.train
    if args.model == "sylnet":
        net_config = dataclasses.replace(config.sylnet, feature_dim=config.feature.n_mels)
        if args.ordinal:
            rank = max(s.count for s in samples) + 1
            net_config = dataclasses.replace(net_config, head="ordinal", rank=rank)
        model = sylnet_init(net_config, seed=child_seed(train_config.seed, "init:sylnet"))
        train_config = dataclasses.replace(train_config, loss=loss_for_model(model))
        config = dataclasses.replace(config, sylnet=net_config, train=train_config)
    else:
        net_config = dataclasses.replace(config.blstm, feature_dim=config.feature.n_mels)
        model = blstm_init(net_config, seed=child_seed(train_config.seed, "init:blstm"))
        train_config = dataclasses.replace(train_config, loss="l1_relative")
        config = dataclasses.replace(config, blstm=net_config, train=train_config)

    train_part, val_part = train_val_split(samples, args.val_fraction, train_config.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def on_best(best_model, epoch):
        save_checkpoint(best_model, config.feature, out)

    model, train_log = train(model, train_part, val_part, train_config, on_best=on_best)
    save_checkpoint(model, config.feature, out)
    _write_trainlog(train_log, out)
    _snapshot_near(config, out)
    print(
        f"trained {args.model} on {len(train_part)} utterances: best validation error "
        f"{train_log.best_val_error_pct:.2f}% at epoch {train_log.best_epoch} "
        f"({train_log.stop_reason}) -> {out}"
    )
    return 0


def cmd_adapt(args, config: AppConfig) -> int:
    model, feature_config = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    ids = _read_ids(args.ids) if args.ids else None
    cache = Path(args.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    samples = build_samples(manifest, ids, feature_config, cache)
    train_config = dataclasses.replace(config.train, loss=loss_for_model(model))
    config = dataclasses.replace(config, feature=feature_config, train=train_config)

    adapted, train_log = adapt(model, samples, train_config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(adapted, feature_config, out)
    _write_trainlog(train_log, out)
    _snapshot_near(config, out)
    print(
        f"adapted on {len(samples)} utterances: best error "
        f"{train_log.best_val_error_pct:.2f}% at epoch {train_log.best_epoch} -> {out}"
    )
    return 0


def _predict_single(model, feats: np.ndarray) -> float:
    if isinstance(model, SylNet):
        trace = forward(model, feats)
        if model.config.head == "ordinal":
            return float(decode_ordinal(trace.final_estimate))
        return float(trace.final_estimate)
    from .baseline_nets import blstm_forward

    return float(blstm_forward(model, feats).final_estimate)


def _expand_inputs(inputs: list[str]) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.rglob("*.wav"), key=str)
            if not found:
                raise DataError(f"directory {p} contains no .wav files")
            paths.extend(found)
        else:
            paths.append(p)
    return paths


def cmd_count(args, config: AppConfig) -> int:
    model, feature_config = load_checkpoint(args.checkpoint)
    paths = _expand_inputs(args.inputs)
    lines = []
    failed = False
    for path in paths:
        try:
            samples, rate = load_wav(path)
            matrix = extract_features(samples, rate, feature_config)
            raw = _predict_single(model, model_input(matrix, feature_config))
            rounded = int(np.floor(max(raw, 0.0) + 0.5))
            line = f"{path}\t{rounded}\t{raw!r}"
            print(line)
            lines.append(line)
        except (DataError, NumericError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failed = True
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("".join(line + "\n" for line in lines))
        _snapshot_near(config, out)
    return 2 if failed else 0


def cmd_calibrate(args, config: AppConfig) -> int:
    manifest = load_manifest(args.manifest)
    envelopes = []
    counts = []
    for utt in manifest:
        samples, rate = load_wav(utt.audio_path)
        envelopes.append(band_energy_envelope(samples, rate, config.envelope))
        counts.append(utt.syllable_count)
    calibration = calibrate(envelopes, counts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_calibration(calibration, out)
    _snapshot_near(config, out)
    print(
        f"calibrated on {len(counts)} utterances: theta={calibration.theta:.2f} "
        f"alpha={calibration.alpha:.4f} beta={calibration.beta:.4f} "
        f"training error {calibration.training_error_pct:.2f}% -> {out}"
    )
    return 0


def cmd_evaluate(args, config: AppConfig) -> int:
    manifest = load_manifest(args.manifest)
    by_id = manifest.by_id()
    if args.ids:
        ids = _read_ids(args.ids)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"ids not in manifest: {missing[:5]}")
        utterances = [by_id[i] for i in ids]
    else:
        utterances = list(manifest.utterances)

    if args.checkpoint:
        if not args.cache_dir:
            raise DataError("--cache-dir is required with --checkpoint")
        model, feature_config = load_checkpoint(args.checkpoint)
        method = NeuralCountMethod(
            "model", model, feature_config, Path(args.cache_dir), config.train
        )
    else:
        calibration = load_calibration(args.calibration)
        method = EnvelopePeakMethod("envelope", config.envelope, calibration)

    estimates = method.predict(utterances)
    targets = [u.syllable_count for u in utterances]
    error = relative_error_pct(estimates, targets)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "error_pct": error,
        "n_utterances": len(utterances),
        "per_utterance": [
            {"id": u.id, "target": u.syllable_count, "estimate": float(e)}
            for u, e in zip(utterances, estimates)
        ],
    }
    with open(out, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    _snapshot_near(config, out)
    print(f"relative error {error:.3f}% over {len(utterances)} utterances -> {out}")
    return 0


def cmd_experiment(args, config: AppConfig) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    cache = Path(args.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    methods = []
    for item in args.method:
        if "=" not in item:
            raise DataError(f"--method {item!r} must look like NAME=PATH")
        name, path = item.split("=", 1)
        if any(m.name == name for m in methods):
            raise DataError(f"duplicate method name {name!r}")
        if path.endswith(".npz"):
            model, feature_config = load_checkpoint(path)
            methods.append(
                NeuralCountMethod(name, model, feature_config, cache, config.train)
            )
        else:
            calibration = load_calibration(path)
            methods.append(EnvelopePeakMethod(name, config.envelope, calibration))

    if args.plan:
        plan = load_split_plan(args.plan)
    else:
        sizes = list(config.split.sizes_s) if config.split.sizes_s else default_adaptation_sizes()
        plan = make_split_plan(
            manifest,
            test_fraction=config.split.test_fraction,
            sizes_s=sizes,
            folds=config.split.folds,
            seed=child_seed(config.train.seed, "split"),
        )
        save_split_plan(plan, out.parent / f"{out.stem}.plan.json")
    validate_split_plan(plan, manifest)

    report = run_adaptation_experiment(
        methods,
        manifest,
        plan,
        seed=child_seed(config.train.seed, "experiment"),
        metadata={"methods": sorted(m.name for m in methods)},
    )
    save_report(report, out)
    export_report_csv(report, out.parent / f"{out.stem}.csv")
    _snapshot_near(config, out)
    for agg in report.aggregates():
        print(
            f"{agg.method:>12s} {agg.size_label:>6s}: "
            f"{agg.mean_error_pct:7.2f}% +- {agg.std_error_pct:.2f} ({agg.n_folds} folds)"
        )
    failures = [c for c in report.cells if c.failure]
    if failures:
        print(f"{len(failures)} cells failed; see {out}", file=sys.stderr)
    print(f"report -> {out}")
    return 0


def cmd_plot(args, config: AppConfig) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.report:
        report = load_report(args.report)
        if not report.cells:
            raise DataError(f"report {args.report} has no cells, nothing to plot")
        aggregates = report.aggregates()
        fig, ax = plt.subplots(figsize=(7, 4.5))
        methods = sorted({a.method for a in aggregates})
        for method in methods:
            curve = sorted(
                (a for a in aggregates if a.method == method and a.size_label != UNADAPTED_LABEL),
                key=lambda a: a.nominal_size_s,
            )
            if curve:
                ax.errorbar(
                    [a.nominal_size_s for a in curve],
                    [a.mean_error_pct for a in curve],
                    yerr=[a.std_error_pct for a in curve],
                    marker="o",
                    capsize=3,
                    label=method,
                )
            unadapted = [a for a in aggregates if a.method == method and a.size_label == UNADAPTED_LABEL]
            if unadapted:
                ax.axhline(
                    unadapted[0].mean_error_pct,
                    linestyle="--",
                    linewidth=1,
                    color=ax.lines[-1].get_color() if ax.lines else None,
                    label=f"{method} unadapted",
                )
        if any(a.size_label != UNADAPTED_LABEL for a in aggregates):
            ax.set_xscale("log")
        ax.set_xlabel("adaptation data (s)")
        ax.set_ylabel("relative error (%)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        stem = Path(args.report).stem
        png = out_dir / f"{stem}_curve.png"
        fig.savefig(png, dpi=120, metadata={"Software": None})
        plt.close(fig)
        _snapshot_near(config, png)
        with open(out_dir / f"{stem}_curve.csv", "w") as f:
            f.write("method,size_label,nominal_size_s,mean_error_pct,std_error_pct,n_folds\n")
            for a in aggregates:
                f.write(
                    f"{a.method},{a.size_label},{a.nominal_size_s:g},"
                    f"{a.mean_error_pct!r},{a.std_error_pct!r},{a.n_folds}\n"
                )
        print(f"wrote {png}")
        return 0

    if not args.wav:
        raise DataError("--wav is required with --trace-checkpoint")
    model, feature_config = load_checkpoint(args.trace_checkpoint)
    samples, rate = load_wav(args.wav)
    matrix = extract_features(samples, rate, feature_config)
    curve = trace_accumulation(model, model_input(matrix, feature_config))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.step(np.arange(len(curve)), curve, where="post", label="decoded count")
    if args.ref_count is not None:
        ax.axhline(args.ref_count, linestyle="--", color="black", label="reference")
    ax.set_xlabel("frame")
    ax.set_ylabel("count")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    stem = Path(args.wav).stem
    png = out_dir / f"{stem}_trace.png"
    fig.savefig(png, dpi=120, metadata={"Software": None})
    plt.close(fig)
    _snapshot_near(config, png)
    with open(out_dir / f"{stem}_trace.csv", "w") as f:
        f.write("frame,value\n")
        for i, v in enumerate(curve):
            f.write(f"{i},{v!r}\n")
    print(f"wrote {png}")
    return 0


def cmd_synth(args, config: AppConfig) -> int:
    out_dir = Path(args.out_dir)
    manifest = generate_corpus(config.synth, out_dir)
    snapshot_config(config, out_dir / "synth.config.json")
    print(
        f"generated {len(manifest)} utterances "
        f"({manifest.total_duration_s():.1f} s, {len(manifest.speakers())} speakers) -> {out_dir}"
    )
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    try:
        config = _resolve_config(args)
        return args.func(args, config)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
