"""K-means over embedded frames, time-ordered relabeling, and the
bag-of-words video clustering used in the multi-activity setting."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    """Frame clusters in action-label order.

    centers row i holds the center of action label i+1; relabeling maps the
    raw k-means cluster index to the action label (1..N), sorted so that
    label 1 has the smallest mean normalized frame position.
    """

    centers: np.ndarray
    relabeling: np.ndarray

    def __post_init__(self):
        n = self.centers.shape[0]
        if sorted(self.relabeling.tolist()) != list(range(1, n + 1)):
            raise ValueError("relabeling must be a bijection onto 1..N")

    @property
    def n_clusters(self):
        return self.centers.shape[0]


def _sq_dists(points, centers):
    # ||x||^2 + ||c||^2 - 2 x.c, clipped at 0 against rounding
    d = (
        (points * points).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(d, 0.0)


def kmeans_pp_init(points, n_clusters, rng):
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1]).min(axis=1)
    for j in range(1, n_clusters):
        total = closest.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _sq_dists(points, centers[j:j + 1]).min(axis=1))
    return centers


def lloyd(points, centers, max_iter=300):
    """Lloyd iterations from given centers.

    Returns (assignments, centers, inertia, inertia_history); the history is
    recorded after every assignment step and is non-increasing. Empty
    clusters are reseeded at the currently worst-served point.
    """
    centers = centers.copy()
    k = centers.shape[0]
    assignments = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(points, centers)
        new_assign = d.argmin(axis=1)
        closest = d[np.arange(points.shape[0]), new_assign]
        for j in range(k):
            if not np.any(new_assign == j):
                far = int(np.argmax(closest))
                centers[j] = points[far]
                new_assign[far] = j
                closest[far] = 0.0
        history.append(float(closest.sum()))
        if assignments is not None and np.array_equal(assignments, new_assign):
            break
        assignments = new_assign
        for j in range(k):
            centers[j] = points[assignments == j].mean(axis=0)
    return assignments, centers, history[-1], history


def kmeans(points, n_clusters, seed=0, restarts=10, max_iter=300):
    """k-means++ seeded Lloyd's algorithm, best of `restarts` runs by inertia."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a (n, d) matrix")
    if points.shape[0] < n_clusters:
        raise ValueError(
            f"need at least {n_clusters} points, got {points.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        init = kmeans_pp_init(points, n_clusters, rng)
        assign, centers, inertia, _ = lloyd(points, init, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    return best


def order_clusters(assignments, normalized_positions, n_clusters):
    """Relabel raw clusters by ascending mean normalized frame position.

    Ties are broken by the raw cluster index. Returns relabeling[raw] = label
    in 1..N.
    """
    assignments = np.asarray(assignments)
    positions = np.asarray(normalized_positions, dtype=float)
    if assignments.shape != positions.shape:
        raise ValueError("one normalized position per assigned frame required")
    means = np.empty(n_clusters)
    for j in range(n_clusters):
        members = positions[assignments == j]
        if members.size == 0:
            raise ValueError(f"cluster {j} has no members")
        means[j] = members.mean()
    order = np.argsort(means, kind="stable")
    relabeling = np.empty(n_clusters, dtype=int)
    for label, raw in enumerate(order, start=1):
        relabeling[raw] = label
    return relabeling


def build_cluster_model(raw_centers, relabeling):
    centers = np.empty_like(raw_centers)
    for raw, label in enumerate(relabeling):
        centers[label - 1] = raw_centers[raw]
    return ClusterModel(centers=centers, relabeling=np.asarray(relabeling, dtype=int))


def assign_labels(model, embedded):
    """Nearest-center action label (1..N) per frame."""
    return _sq_dists(np.asarray(embedded, dtype=float), model.centers).argmin(axis=1) + 1


def run_lengths(labels):
    """Maximal constant runs of a label sequence as (label, length) pairs."""
    labels = np.asarray(labels)
    runs = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            runs.append((int(labels[start]), t - start))
            start = t
    return runs


def initial_pseudo_labels(embedded_by_video, model):
    """Nearest-center frame labels per video plus mean-run-length statistics.

    The per-action statistic counts maximal runs, not frames, and seeds the
    Poisson mean lengths. Actions that never appear fall back to the global
    mean run length.
    """
    labels = {}
    lengths = {label: [] for label in range(1, model.n_clusters + 1)}
    for video_id, embedded in embedded_by_video.items():
        seq = assign_labels(model, embedded)
        labels[video_id] = seq
        for label, length in run_lengths(seq):
            lengths[label].append(length)
    all_lengths = [l for ls in lengths.values() for l in ls]
    fallback = float(np.mean(all_lengths)) if all_lengths else 1.0
    mean_lengths = np.empty(model.n_clusters)
    for label in range(1, model.n_clusters + 1):
        if lengths[label]:
            mean_lengths[label - 1] = float(np.mean(lengths[label]))
        else:
            log.warning("action %d absent from pseudo-labels; using fallback mean length", label)
            mean_lengths[label - 1] = fallback
    return labels, mean_lengths


def soft_assignments(embedded, centers, temperature):
    """Per-frame soft weights over vocabulary centers; rows sum to 1."""
    d = _sq_dists(np.asarray(embedded, dtype=float), centers)
    shifted = d - d.min(axis=1, keepdims=True)
    w = np.exp(-shifted / temperature)
    return w / w.sum(axis=1, keepdims=True)


def video_histogram(embedded, centers, temperature):
    """Soft bag-of-words histogram of one video, L1-normalized."""
    hist = soft_assignments(embedded, centers, temperature).sum(axis=0)
    return hist / hist.sum()


def cluster_videos(embedded_by_video, frame_cluster_model, n_activities,
                   temperature=None, seed=0, vocab_size=None, restarts=10):
    """Group videos by activity via soft bag-of-words histograms.

    A vocabulary of `vocab_size` clusters (default N * n_activities) is fit
    over all embedded frames; every frame is soft-assigned with a Gaussian
    kernel (temperature defaults to the mean squared nearest-center
    distance); per-video histograms are L1-normalized and clustered with
    k-means into n_activities groups. Returns {video_id: activity index}.
    """
    if n_activities > len(embedded_by_video):
        raise ValueError("more activity clusters than videos")
    if vocab_size is None:
        vocab_size = frame_cluster_model.n_clusters * n_activities
    all_frames = np.vstack(list(embedded_by_video.values()))
    _, vocab, _ = kmeans(all_frames, vocab_size, seed=seed, restarts=restarts)
    if temperature is None:
        temperature = float(_sq_dists(all_frames, vocab).min(axis=1).mean())
        if temperature <= 0:
            temperature = 1.0
    histograms = np.empty((len(embedded_by_video), vocab_size))
    video_ids = list(embedded_by_video.keys())
    for i, video_id in enumerate(video_ids):
        histograms[i] = video_histogram(embedded_by_video[video_id], vocab,
                                        temperature)
    assign, _, _ = kmeans(histograms, n_activities, seed=seed + 1, restarts=restarts)
    return {video_id: int(a) for video_id, a in zip(video_ids, assign)}
