"""Command-line interface.

Subcommands: synth (generate a synthetic dataset), embed (train and save the
frame-level embedding), train (full pipeline + reports), segment (decode a
manifest with saved models), eval (score a segments.csv against ground
truth), report (re-render reports from a finished run). Diagnostics go to
stderr and any failure exits nonzero; ACTSEG_LOG_LEVEL controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data, em, persist, reports
from .config import make_run_config, parse_kv_file
from .em import EmConfig
from .hmm import frame_log_likelihoods, viterbi_decode
from .pipeline import evaluate_predictions, run_pipeline
from .shuffle import action_embed_frames
from .embedding import embed_frames, train_frame_embedding

log = logging.getLogger("actseg")


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_synth(args):
    lam = _parse_floats(args.mean_lengths)
    if len(lam) == 1:
        lam = lam * args.actions
    videos, ground_truth, activities = data.synth_generate(
        n_videos=args.videos, n_actions=args.actions, dim=args.dim,
        mean_lengths=lam, separation=args.separation,
        skip_prob=args.skip_prob, seed=args.seed,
        length_range=(args.min_len, None), n_activities=args.activities)
    manifest = data.write_dataset(
        args.out, videos, ground_truth,
        activities if args.activities > 1 else None, fmt=args.format)
    print(f"wrote {len(videos)} videos to {manifest}")
    return 0


def _config_from_args(args):
    file_values = parse_kv_file(args.config) if args.config else {}
    overrides = {
        "n_actions": args.actions,
        "variant": args.variant,
        "seed": args.seed,
        "max_epochs": args.epochs,
        "multi_activity": args.multi_activity or None,
        "n_activities": args.activities,
    }
    return make_run_config(file_values, overrides)


def cmd_embed(args):
    videos, _, _ = data.load_dataset(args.manifest)
    model = train_frame_embedding(videos, epochs=args.epochs or 30,
                                  learning_rate=args.learning_rate,
                                  seed=args.seed or 0)
    store = {}
    for i, layer in enumerate(model.trunk):
        store[f"trunk_{i}_w"] = layer.weight
        store[f"trunk_{i}_b"] = layer.bias
    store["head_w"] = model.head.weight
    store["head_b"] = model.head.bias
    np.savez(args.out, **store)
    print(f"frame embedding trained ({len(model.loss_history)} epochs, "
          f"final mse {model.loss_history[-1]:.6f}) -> {args.out}")
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    videos, ground_truth, _ = data.load_dataset(args.manifest)
    result = run_pipeline(cfg, videos, ground_truth)
    out_dir = Path(args.out)
    persist.save_run(out_dir / "models", result, cfg)
    written = reports.emit_reports(result, out_dir, ground_truth)
    for path in written:
        print(f"wrote {path}")
    if result.metrics:
        print(f"mof={result.metrics['mof']:.4f} f1={result.metrics['f1']:.4f}")
    return 0


def cmd_segment(args):
    run_meta, states = persist.load_run(Path(args.models))
    videos, _, _ = data.load_dataset(args.manifest)
    video_activities = run_meta.get("video_activities") or {}
    config = EmConfig(max_len_policy=run_meta.get("max_len_policy", "auto"),
                      force_full_transcript=run_meta["variant"] == "actionshuffle_viterbi")
    segmentations = {}
    frame_labels = {}
    n_actions = run_meta["n_actions"]
    for video in videos:
        activity = 0
        if run_meta["multi_activity"]:
            if video.video_id not in video_activities:
                raise ValueError(
                    f"{video.video_id}: no stored activity assignment; "
                    "multi-activity segment supports training-manifest videos only")
            activity = video_activities[video.video_id]
        embedding_model, ssl_model, likelihood_model, params, _ = states[activity]
        embedded = (action_embed_frames(ssl_model, video) if ssl_model is not None
                    else embed_frames(embedding_model, video))
        ll = frame_log_likelihoods(likelihood_model, embedded)
        cap = (video.n_frames if config.max_len_policy == "exact"
               else em._decode_max_len(config, video.n_frames, params))
        seg, _ = viterbi_decode(ll, params, max_len=cap,
                                force_full_transcript=config.force_full_transcript)
        segmentations[video.video_id] = seg
        frame_labels[video.video_id] = seg.frame_labels() + activity * n_actions
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports.write_segments_csv(out_dir / "segments.csv", segmentations, frame_labels)
    print(f"wrote {out_dir / 'segments.csv'}")
    return 0


def _read_segments_csv(path):
    frame_labels = {}
    rows = Path(path).read_text().strip().splitlines()
    if rows[0] != "video_id,action,start_frame,length":
        raise ValueError(f"{path}: unexpected header {rows[0]!r}")
    per_video = {}
    for row in rows[1:]:
        video_id, action, start, length = row.split(",")
        per_video.setdefault(video_id, []).append(
            (int(start), int(action), int(length)))
    for video_id, segments in per_video.items():
        segments.sort()
        frame_labels[video_id] = np.concatenate(
            [np.full(length, action, dtype=int) for _, action, length in segments])
    return frame_labels


def cmd_eval(args):
    frame_labels = _read_segments_csv(args.segments)
    _, ground_truth, _ = data.load_dataset(args.manifest)
    if not ground_truth:
        raise ValueError("manifest has no ground-truth files to evaluate against")
    covered = {vid: seq for vid, seq in frame_labels.items() if vid in ground_truth}
    if not covered:
        raise ValueError("no overlap between segments.csv and ground truth")
    gt_background = args.background if args.background >= 0 else None
    values, _ = evaluate_predictions(
        covered, {vid: ground_truth[vid] for vid in covered},
        gt_background=gt_background)
    for key in sorted(values):
        print(f"{key}={values[key]:.6f}")
    if args.out:
        reports.write_metrics_kv(args.out, values)
    return 0


def cmd_report(args):
    run_dir = Path(args.run)
    frame_labels = _read_segments_csv(run_dir / "segments.csv")
    _, ground_truth, _ = (data.load_dataset(args.manifest)
                          if args.manifest else (None, None, None))
    out_dir = Path(args.out or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports.write_timelines_txt(out_dir / "timelines.txt", frame_labels, ground_truth)
    reports.render_timelines_png(out_dir / "timelines.png", frame_labels, ground_truth)
    q_curves = sorted(run_dir.glob("*q_curve.csv"))
    for curve in q_curves:
        q = [float(line.split(",")[1])
             for line in curve.read_text().strip().splitlines()[1:]]
        reports.render_q_curve_png(out_dir / (curve.stem + ".png"), q)
    print(f"reports rendered to {out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="actseg",
        description="Unsupervised temporal action segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--actions", type=int, default=5)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--mean-lengths", default="20,30,25,20,30",
                   help="comma-separated Poisson means (one value is broadcast)")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--skip-prob", type=float, default=0.1)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--activities", type=int, default=1)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="train and save the frame-level embedding")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="run the full pipeline and emit reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--variant", help="ASAL | FTE_HMM | ActionShuffle_initHMM | ActionShuffle_Viterbi")
    p.add_argument("--actions", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--multi-activity", action="store_true", default=False)
    p.add_argument("--activities", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="decode a manifest with saved models")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, help="models dir written by train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score segments.csv against ground truth")
    p.add_argument("--segments", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--background", type=int, default=-1,
                   help="gt background label to exclude (default: none)")
    p.add_argument("--out", help="also write metrics.kv here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-render reports from a finished run")
    p.add_argument("--run", required=True, help="directory written by train")
    p.add_argument("--manifest", help="manifest with gt for side-by-side strips")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    level = os.environ.get("ACTSEG_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        if os.environ.get("ACTSEG_LOG_LEVEL", "").upper() == "DEBUG":
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
