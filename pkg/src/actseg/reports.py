"""Run reports: delimited outputs plus rendered figures.

Every training run emits q_curve.csv, metrics.kv, segments.csv and a
plain-text timeline strip per video, and renders the matching matplotlib
figures (q_curve.png, timelines.png) next to them.
"""

from __future__ import annotations

import string
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

TIMELINE_WIDTH = 80
_LETTERS = string.ascii_uppercase + string.ascii_lowercase + string.digits


def _label_char(label):
    if label <= 0:
        return "."
    if label <= len(_LETTERS):
        return _LETTERS[label - 1]
    return "?"


def write_q_curve(path, q_history):
    lines = ["epoch,mean_q"]
    lines += [f"{epoch},{q:.12g}" for epoch, q in enumerate(q_history, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_progress_csv(path, progress, n_actions):
    """Per-epoch training records: Q value, losses, and the length means."""
    columns = ["epoch", "mean_q", "ssl_loss", "mlp_loss", "skipped"]
    lam_cols = [f"lambda_{c}" for c in range(1, n_actions + 1)]
    lines = [",".join(columns + lam_cols)]
    for record in progress:
        cells = []
        for column in columns:
            value = record.get(column, "")
            cells.append(f"{value:.12g}" if isinstance(value, float) else str(value))
        lams = record.get("lambdas", [])
        cells += [f"{lam:.12g}" for lam in lams] + [""] * (n_actions - len(lams))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_metrics_kv(path, values):
    lines = [f"{key}={values[key]:.6f}" if isinstance(values[key], float)
             else f"{key}={values[key]}" for key in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_segments_csv(path, segmentations, frame_labels=None):
    """One row per segment: video_id, action, start_frame, length.

    The action column holds the globalized label when frame_labels are
    given (multi-activity runs); start_frame is 0-based.
    """
    lines = ["video_id,action,start_frame,length"]
    for video_id in sorted(segmentations):
        seg = segmentations[video_id]
        offset = 0
        if frame_labels is not None:
            offset = int(frame_labels[video_id][0]) - int(seg.actions[0])
        start = 0
        for action, length in zip(seg.actions, seg.lengths):
            lines.append(f"{video_id},{int(action) + offset},{start},{int(length)}")
            start += int(length)
    Path(path).write_text("\n".join(lines) + "\n")


def timeline_string(labels, width=TIMELINE_WIDTH):
    """One character per time bucket, sampled at bucket centers."""
    labels = np.asarray(labels)
    n = len(labels)
    width = min(width, n)
    idx = ((np.arange(width) + 0.5) * n / width).astype(int)
    return "".join(_label_char(int(v)) for v in labels[idx])


def write_timelines_txt(path, frame_labels, ground_truth=None, width=TIMELINE_WIDTH):
    lines = []
    for video_id in sorted(frame_labels):
        lines.append(f"{video_id}  (T={len(frame_labels[video_id])})")
        if ground_truth is not None and video_id in ground_truth:
            lines.append("  gt   " + timeline_string(ground_truth[video_id], width))
        lines.append("  pred " + timeline_string(frame_labels[video_id], width))
    Path(path).write_text("\n".join(lines) + "\n")


def render_q_curve_png(path, q_history):
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(range(1, len(q_history) + 1), q_history, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean Q over videos")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.savefig(path, dpi=120, bbox_inches="tight")


def render_timelines_png(path, frame_labels, ground_truth=None, max_videos=30):
    video_ids = sorted(frame_labels)[:max_videos]
    rows_per_video = 2 if ground_truth else 1
    fig = Figure(figsize=(10, 0.45 * rows_per_video * max(1, len(video_ids)) + 0.6))
    vmax = max(int(np.max(frame_labels[v])) for v in video_ids)
    if ground_truth:
        vmax = max(vmax, max(int(np.max(ground_truth[v])) for v in video_ids
                             if v in ground_truth))
    imshow_kw = dict(aspect="auto", interpolation="nearest",
                     cmap="tab20", vmin=0, vmax=max(vmax, 1))
    for i, video_id in enumerate(video_ids):
        if ground_truth and video_id in ground_truth:
            ax = fig.add_subplot(len(video_ids) * 2, 1, 2 * i + 1)
            ax.imshow([np.asarray(ground_truth[video_id])], **imshow_kw)
            ax.set_xticks([]), ax.set_yticks([])
            ax.set_ylabel(f"{video_id}\ngt", rotation=0, ha="right",
                          va="center", fontsize=6)
            ax = fig.add_subplot(len(video_ids) * 2, 1, 2 * i + 2)
            ax.imshow([np.asarray(frame_labels[video_id])], **imshow_kw)
            ax.set_ylabel("pred", rotation=0, ha="right", va="center", fontsize=6)
        else:
            ax = fig.add_subplot(len(video_ids), 1, i + 1)
            ax.imshow([np.asarray(frame_labels[video_id])], **imshow_kw)
            ax.set_ylabel(video_id, rotation=0, ha="right", va="center", fontsize=6)
        ax.set_xticks([]), ax.set_yticks([])
    fig.savefig(path, dpi=120, bbox_inches="tight")


def emit_reports(result, out_dir, ground_truth=None):
    """Write all delimited reports and figures for a pipeline result.

    Returns the list of created paths. The Q curve comes from the first
    state with a history (per-activity curves are written for multi-activity
    runs).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, writer, *args, **kwargs):
        path = out_dir / name
        writer(path, *args, **kwargs)
        written.append(path)

    emit("segments.csv", write_segments_csv, result.segmentations,
         result.frame_labels)
    emit("timelines.txt", write_timelines_txt, result.frame_labels, ground_truth)
    emit("timelines.png", render_timelines_png, result.frame_labels, ground_truth)
    if result.metrics is not None:
        emit("metrics.kv", write_metrics_kv, result.metrics)
    single = len(result.states) == 1
    for activity, state in sorted(result.states.items()):
        if not state.q_history:
            continue
        prefix = "" if single else f"activity_{activity}_"
        emit(prefix + "q_curve.csv", write_q_curve, state.q_history)
        emit(prefix + "q_curve.png", render_q_curve_png, state.q_history)
        emit(prefix + "progress.csv", write_progress_csv, state.progress,
             state.hmm_params.n_actions)
    return written
