"""Command-line entry point.

Subcommands: ``train``, ``sweep``, ``eval``, ``export-embeddings`` and
``synth`` (synthetic fixture generation).  Every command writes delimited
outputs plus, unless disabled, matplotlib figures alongside them.

Exit codes: 0 success, 1 runtime or numeric failure, 2 configuration or
validation failure.  Set CROSSEMO_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import figures
from .config import RunConfig, load_run_config, snapshot_config
from .data import (
    SynthSpec,
    generate_crossmodal,
    load_regression_csv,
    load_utterance_csv,
    save_regression_csv,
    save_utterance_csv,
    segment_into_utterances,
    split_dataset,
)
from .errors import ConfigError, CrossemoError, DataError, UsageError
from .metrics import (
    evaluate_regression,
    fisher_r_to_z_test,
    format_float,
    macro_f1,
    write_report,
)
from .model import encode, infer_sequence, load_checkpoint, predict, save_checkpoint
from .postprocess import apply_plan_per_recording, grid_search, load_plan, save_plan
from .training import (
    TrainResult,
    compensate_dataset,
    run_training,
    sweep as run_sweep_grid,
    write_history_csv,
    write_sweep_csv,
)
from .triplet import binarize_classes

log = logging.getLogger("crossemo")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _load_datasets(cfg: RunConfig) -> dict:
    data: dict[str, dict] = {}
    for modality, parts in cfg.data_paths.items():
        data[modality] = {}
        for part, path in parts.items():
            if cfg.task == "regression":
                data[modality][part] = load_regression_csv(path, cfg.frame_rate_hz, modality, part)
            else:
                data[modality][part] = load_utterance_csv(path, cfg.n_classes, modality, part)
    return data


def _check_width(model, modality: str, width: int) -> None:
    expected = model.input_dims.get(modality)
    if width != expected:
        raise UsageError(
            f"{modality} data width {width} does not match checkpoint width {expected}"
        )


def _dev_predictions(model, dataset):
    preds = [infer_sequence(model, model.target_modality, rec.features) for rec in dataset.recordings]
    golds = [rec.gold for rec in dataset.recordings]
    return preds, golds


def _train_gold_stats(train_dataset) -> tuple[float, float]:
    gold = np.concatenate([rec.gold for rec in train_dataset.recordings])
    return float(gold.mean()), float(gold.std())


def _write_run_artifacts(cfg: RunConfig, result: TrainResult, prepared: dict, out_dir: str) -> None:
    """metrics CSV, checkpoint, post-processing plan and figures for one run."""
    os.makedirs(out_dir, exist_ok=True)
    write_history_csv(result.history, os.path.join(out_dir, "metrics.csv"))
    extra = {
        "delay_seconds": cfg.training.delay_seconds,
        "frame_rate_hz": cfg.frame_rate_hz,
        "triplet_threshold": cfg.objective.triplet_threshold,
        "best_epoch": result.best_epoch,
        "best_dev_metric": result.best_dev_metric,
    }
    save_checkpoint(result.model, os.path.join(out_dir, "checkpoint.npz"), extra_meta=extra)

    target = cfg.target_modality
    if cfg.task == "regression":
        preds, golds = _dev_predictions(result.model, prepared[target]["dev"])
        gold_mean, gold_std = _train_gold_stats(prepared[target]["train"])
        plan = grid_search(
            preds,
            golds,
            cfg.frame_rate_hz,
            gold_mean,
            gold_std,
            cfg.filter_windows,
            cfg.shift_delays,
        )
        save_plan(plan, os.path.join(out_dir, "plan.txt"))
        if cfg.figures:
            fig_dir = os.path.join(out_dir, "figures")
            os.makedirs(fig_dir, exist_ok=True)
            figures.render_training_curves(result.history, os.path.join(fig_dir, "training_curves.png"))
            post = apply_plan_per_recording(plan, preds, cfg.frame_rate_hz)
            figures.render_prediction_overlay(
                golds[0], preds[0], post[0], os.path.join(fig_dir, "dev_prediction.png")
            )
    elif cfg.figures:
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        figures.render_training_curves(result.history, os.path.join(fig_dir, "training_curves.png"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    data = _load_datasets(cfg)
    result, prepared = run_training(data, cfg.model, cfg.training)
    os.makedirs(cfg.output_dir, exist_ok=True)
    snapshot_config(cfg, os.path.join(cfg.output_dir, "config.yaml"))
    _write_run_artifacts(cfg, result, prepared, cfg.output_dir)
    print(f"run_dir={cfg.output_dir}")
    print(f"best_epoch={result.best_epoch}")
    print(f"dev_metric={format_float(result.best_dev_metric)}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    data = _load_datasets(cfg)
    sweep_result = run_sweep_grid(cfg.sweep, cfg.training, data, cfg.model)
    os.makedirs(cfg.output_dir, exist_ok=True)
    snapshot_config(cfg, os.path.join(cfg.output_dir, "config.yaml"))
    write_sweep_csv(sweep_result.rows, os.path.join(cfg.output_dir, "sweep.csv"))
    selected = sweep_result.selected
    with open(os.path.join(cfg.output_dir, "selected.yaml"), "w", encoding="utf-8") as fh:
        fh.write(f"alpha: {format_float(selected.alpha)}\n")
        fh.write(f"beta: {format_float(selected.beta)}\n")
        fh.write(f"dev_metric: {format_float(selected.dev_metric)}\n")
    if cfg.figures:
        figures.render_sweep(sweep_result.rows, os.path.join(cfg.output_dir, "sweep.png"))
    _write_run_artifacts(cfg, sweep_result.selected_result, sweep_result.prepared, os.path.join(cfg.output_dir, "selected"))
    print(f"run_dir={cfg.output_dir}")
    print(f"selected_alpha={format_float(selected.alpha)}")
    print(f"selected_beta={format_float(selected.beta)}")
    print(f"dev_metric={format_float(selected.dev_metric)}")
    return 0


def cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    modality = args.modality or model.target_modality
    if modality not in model.encoders:
        raise UsageError(f"checkpoint has no {modality!r} encoder")
    frame_rate = float(extra["frame_rate_hz"])
    delay = float(extra["delay_seconds"])
    os.makedirs(args.out, exist_ok=True)

    if model.task == "regression":
        ds = load_regression_csv(args.data, frame_rate, modality, "dev")
        _check_width(model, modality, ds.feature_dim)
        ds = compensate_dataset(ds, delay)
        preds = [infer_sequence(model, modality, rec.features) for rec in ds.recordings]
        golds = [rec.gold for rec in ds.recordings]
        raw_eval = evaluate_regression(np.concatenate(preds), np.concatenate(golds))
        rows = [
            {"metric": "ccc", "value": raw_eval.ccc, "n": raw_eval.n},
            {"metric": "pcc", "value": raw_eval.pcc, "n": raw_eval.n},
        ]
        post = None
        if args.plan:
            plan = load_plan(args.plan)
            post = apply_plan_per_recording(plan, preds, frame_rate)
            post_eval = evaluate_regression(np.concatenate(post), np.concatenate(golds))
            p = fisher_r_to_z_test(post_eval.ccc, post_eval.n, raw_eval.ccc, raw_eval.n)
            rows.append({"metric": "ccc_postprocessed", "value": post_eval.ccc, "n": post_eval.n, "p_value": p})
            rows.append({"metric": "pcc_postprocessed", "value": post_eval.pcc, "n": post_eval.n})
        write_report(rows, os.path.join(args.out, "report.csv"), os.path.join(args.out, "report.txt"))
        if args.figures:
            figures.render_prediction_overlay(
                golds[0], preds[0], post[0] if post else None, os.path.join(args.out, "prediction.png")
            )
        for row in rows:
            print(f"{row['metric']}={format_float(row['value'])}")
    else:
        ds = load_utterance_csv(args.data, model.n_outputs, modality, "dev")
        _check_width(model, modality, ds.feature_dim)
        pred_labels = [int(np.argmax(infer_sequence(model, modality, u.features))) for u in ds.utterances]
        gold_labels = [u.label for u in ds.utterances]
        result = macro_f1(pred_labels, gold_labels, model.n_outputs)
        rows = [{"metric": "macro_f1", "value": result.f1, "n": len(gold_labels)}]
        write_report(rows, os.path.join(args.out, "report.csv"), os.path.join(args.out, "report.txt"))
        with open(os.path.join(args.out, "confusion.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"pred_{c}" for c in range(model.n_outputs)])
            for row in result.confusion:
                writer.writerow([int(v) for v in row])
        if args.figures:
            figures.render_confusion(result.confusion, os.path.join(args.out, "confusion.png"))
        print(f"macro_f1={format_float(result.f1)}")
    return 0


def cmd_export_embeddings(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    frame_rate = float(extra["frame_rate_hz"])
    delay = float(extra["delay_seconds"])
    threshold = float(extra.get("triplet_threshold", 0.0))
    sources = [(m, p) for m, p in (("audio", args.audio), ("video", args.video)) if p]
    if not sources:
        raise UsageError("provide --audio and/or --video dataset paths")
    for modality, _ in sources:
        if modality not in model.encoders:
            raise UsageError(f"checkpoint has no {modality!r} encoder")

    E = model.embedding_dim
    rows = []
    for modality, path in sources:
        if model.task == "regression":
            ds = load_regression_csv(path, frame_rate, modality, "dev")
            _check_width(model, modality, ds.feature_dim)
            ds = compensate_dataset(ds, delay)
            for rec in ds.recordings:
                emb = encode(model, modality, rec.features)
                labels = binarize_classes(rec.gold, threshold)
                for t in range(emb.shape[0]):
                    rows.append([rec.id, t, modality, int(labels[t]), rec.gold[t], emb[t]])
        else:
            ds = load_utterance_csv(path, model.n_outputs, modality, "dev")
            _check_width(model, modality, ds.feature_dim)
            for k, utt in enumerate(ds.utterances):
                emb = encode(model, modality, utt.features).mean(axis=0)
                rows.append([utt.id, k, modality, utt.label, None, emb])

    out_csv = args.out
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "index", "modality", "label"]
        if model.task == "regression":
            header.append("gold")
        writer.writerow(header + [f"e{i}" for i in range(E)])
        for rid, idx, modality, label, gold, emb in rows:
            out = [rid, idx, modality, label]
            if model.task == "regression":
                out.append(format_float(gold))
            writer.writerow(out + [format_float(v) for v in emb])
    if args.figures:
        emb_matrix = np.array([r[5] for r in rows])
        figures.render_embedding_scatter(
            emb_matrix,
            [r[3] for r in rows],
            [r[2] for r in rows],
            os.path.splitext(out_csv)[0] + ".png",
        )
    print(f"rows={len(rows)}")
    print(f"embedding_dim={E}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        latent_dim=args.latent_dim,
        audio_dim=args.audio_dim,
        video_dim=args.video_dim,
        noise_audio=args.noise_audio,
        noise_video=args.noise_video,
        smoothing_frames=args.smoothing,
        frame_rate_hz=args.frame_rate,
        seed=args.seed,
    )
    counts = [int(v) for v in args.split.split(",")]
    if len(counts) != 3 or sum(counts) != args.recordings:
        raise ConfigError(f"--split must be three counts summing to {args.recordings}")
    audio, video = generate_crossmodal(spec, args.recordings, args.frames)
    split = {"train": counts[0], "dev": counts[1], "test": counts[2]}
    os.makedirs(args.out, exist_ok=True)
    for modality, full in (("audio", audio), ("video", video)):
        for part, ds in split_dataset(full, split).items():
            if args.utterance_frames:
                save_utterance_csv(
                    segment_into_utterances(ds, args.utterance_frames),
                    os.path.join(args.out, f"{modality}_{part}.csv"),
                )
            else:
                save_regression_csv(ds, os.path.join(args.out, f"{modality}_{part}.csv"))
    print(f"out_dir={args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossemo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("train", cmd_train), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV to evaluate on")
    p.add_argument("--modality", default=None, help="modality of the data (default: checkpoint target)")
    p.add_argument("--plan", default=None, help="post-processing plan file")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", default=None, help="audio dataset CSV")
    p.add_argument("--video", default=None, help="video dataset CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_export_embeddings)

    p = sub.add_parser("synth")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recordings", type=int, default=10)
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--latent-dim", type=int, default=4)
    p.add_argument("--audio-dim", type=int, default=20)
    p.add_argument("--video-dim", type=int, default=30)
    p.add_argument("--noise-audio", type=float, default=1.0)
    p.add_argument("--noise-video", type=float, default=0.1)
    p.add_argument("--smoothing", type=int, default=25)
    p.add_argument("--frame-rate", type=float, default=25.0)
    p.add_argument("--split", default=None, help="train,dev,test recording counts")
    p.add_argument("--utterance-frames", type=int, default=None, help="emit utterance CSVs instead")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CROSSEMO_LOG", "warning").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and args.split is None:
        args.split = f"{args.recordings - 2 * max(1, args.recordings // 5)},{max(1, args.recordings // 5)},{max(1, args.recordings // 5)}"
    try:
        return args.fn(args)
    except (ConfigError, DataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CrossemoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
