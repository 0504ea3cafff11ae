"""Dataset manifests, feature/ground-truth file formats, and the synthetic
generator used for desk-scale verification.

Feature files are either CSV (one frame per row) or raw little-endian
binary: an 8-byte header (uint32 T, uint32 D) followed by T*D float32
values, row-major. Ground-truth files hold one integer label per line.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import FrameSequence

_HEADER = struct.Struct("<II")


@dataclass
class VideoRecord:
    video_id: str
    feature_path: Path
    gt_path: Path = None
    activity: int = None


@dataclass
class DatasetManifest:
    records: list
    root: Path


def read_features_bin(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated binary header")
    n_frames, dim = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 4 * n_frames * dim
    if len(raw) != expected:
        raise ValueError(
            f"{path}: truncated binary payload (expected {expected} bytes, got {len(raw)})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(n_frames, dim).astype(float)


def write_features_bin(path, features):
    features = np.asarray(features)
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(features.shape[0], features.shape[1]) + payload)


def read_features_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed CSV features ({exc})") from exc
    if data.size == 0:
        raise ValueError(f"{path}: empty feature file")
    return data


def write_features_csv(path, features):
    # %.17g keeps float64 values exact through the text round trip
    np.savetxt(path, np.asarray(features, dtype=float), delimiter=",", fmt="%.17g")


def read_features(path):
    path = Path(path)
    if path.suffix == ".bin":
        return read_features_bin(path)
    return read_features_csv(path)


def read_gt(path):
    labels = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not an integer label: {line!r}") from exc
    if not labels:
        raise ValueError(f"{path}: empty ground-truth file")
    return np.array(labels, dtype=int)


def write_gt(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def load_manifest(path):
    """Parse a manifest CSV with columns video_id, features[, gt[, activity]].

    Paths are resolved relative to the manifest location and must exist.
    """
    path = Path(path)
    records = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "video_id" not in reader.fieldnames \
                or "features" not in reader.fieldnames:
            raise ValueError(f"{path}: manifest needs video_id and features columns")
        for lineno, row in enumerate(reader, start=2):
            feature_path = path.parent / row["features"]
            if not feature_path.exists():
                raise ValueError(f"{path}:{lineno}: missing feature file {feature_path}")
            gt_path = None
            if row.get("gt"):
                gt_path = path.parent / row["gt"]
                if not gt_path.exists():
                    raise ValueError(f"{path}:{lineno}: missing gt file {gt_path}")
            activity = int(row["activity"]) if row.get("activity") else None
            records.append(VideoRecord(row["video_id"], feature_path, gt_path, activity))
    if not records:
        raise ValueError(f"{path}: empty manifest")
    return DatasetManifest(records=records, root=path.parent)


def load_dataset(manifest_path):
    """Load every video named by a manifest.

    Returns (videos, ground_truth, activities); the ground-truth dict is
    None when no video declares one, activities is None without an activity
    column.
    """
    manifest = load_manifest(manifest_path)
    videos = []
    ground_truth = {}
    activities = {}
    dim = None
    for record in manifest.records:
        features = read_features(record.feature_path)
        if dim is None:
            dim = features.shape[1]
        elif features.shape[1] != dim:
            raise ValueError(
                f"{record.feature_path}: dim {features.shape[1]} != dataset dim {dim}"
            )
        videos.append(FrameSequence(record.video_id, features))
        if record.gt_path is not None:
            gt = read_gt(record.gt_path)
            if len(gt) != features.shape[0]:
                raise ValueError(
                    f"{record.gt_path}: {len(gt)} labels for {features.shape[0]} frames"
                )
            ground_truth[record.video_id] = gt
        if record.activity is not None:
            activities[record.video_id] = record.activity
    return (videos,
            ground_truth if ground_truth else None,
            activities if activities else None)


def _activity_centers(n_actions, dim, separation, n_activities, rng):
    """Per-activity action centers in disjoint coordinate blocks.

    Pairwise distances within an activity are exactly `separation` (rows of
    a scaled orthonormal basis); disjoint blocks keep vocabularies of
    different activities disjoint.
    """
    block = dim // n_activities
    if block < n_actions:
        raise ValueError(
            f"feature dim {dim} too small for {n_activities} activities of "
            f"{n_actions} actions each (needs >= {n_actions * n_activities})"
        )
    centers = np.zeros((n_activities, n_actions, dim))
    for a in range(n_activities):
        q, _ = np.linalg.qr(rng.normal(size=(block, block)))
        centers[a, :, a * block:(a + 1) * block] = q[:n_actions] * (separation / math.sqrt(2.0))
    return centers


def synth_generate(n_videos, n_actions, dim, mean_lengths, separation,
                   skip_prob, seed, length_range=(5, None), n_activities=1):
    """Generate a synthetic dataset with known segmentations.

    Every video draws a monotone action subsequence of [1..N] (each action
    independently dropped with skip_prob, at least 2 kept), Poisson segment
    lengths clamped into length_range, and Gaussian frame features around
    per-action centers separated by `separation` (sigma = 1). Returns
    (videos, ground_truth, activities) with globally distinct ground-truth
    labels across activities.
    """
    if n_actions < 2:
        raise ValueError("need at least 2 actions")
    if not 0 <= skip_prob < 1:
        raise ValueError("skip_prob must lie in [0, 1)")
    lam = np.asarray(mean_lengths, dtype=float)
    if lam.shape != (n_actions,) or np.any(lam <= 0):
        raise ValueError("one positive mean length per action required")
    lo, hi = length_range
    if lo < 1 or (hi is not None and hi < lo):
        raise ValueError(f"infeasible length range {length_range}")
    rng = np.random.default_rng(seed)
    centers = _activity_centers(n_actions, dim, separation, n_activities, rng)

    videos = []
    ground_truth = {}
    activities = {}
    for i in range(n_videos):
        activity = i % n_activities
        while True:
            keep = rng.random(n_actions) >= skip_prob
            if keep.sum() >= 2:
                break
        transcript = np.flatnonzero(keep) + 1
        lengths = []
        for action in transcript:
            length = int(rng.poisson(lam[action - 1]))
            length = max(lo, length)
            if hi is not None:
                length = min(hi, length)
            lengths.append(length)
        frames = []
        labels = []
        for action, length in zip(transcript, lengths):
            mu = centers[activity, action - 1]
            frames.append(mu + rng.normal(size=(length, dim)))
            labels.extend([activity * n_actions + int(action)] * length)
        video_id = f"video_{i:03d}"
        features = np.vstack(frames).astype("<f4").astype(float)
        videos.append(FrameSequence(video_id, features))
        ground_truth[video_id] = np.array(labels, dtype=int)
        activities[video_id] = activity
    return videos, ground_truth, activities


def write_dataset(out_dir, videos, ground_truth=None, activities=None, fmt="bin"):
    """Write feature/gt files plus a manifest.csv; returns the manifest path."""
    if fmt not in ("bin", "csv"):
        raise ValueError("format must be 'bin' or 'csv'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["video_id", "features", "gt", "activity"])
        for video in videos:
            feature_name = f"{video.video_id}.{fmt}"
            if fmt == "bin":
                write_features_bin(out_dir / feature_name, video.features)
            else:
                write_features_csv(out_dir / feature_name, video.features)
            gt_name = ""
            if ground_truth and video.video_id in ground_truth:
                gt_name = f"{video.video_id}.gt.txt"
                write_gt(out_dir / gt_name, ground_truth[video.video_id])
            activity = ""
            if activities and video.video_id in activities:
                activity = str(activities[video.video_id])
            writer.writerow([video.video_id, feature_name, gt_name, activity])
    return manifest_path
