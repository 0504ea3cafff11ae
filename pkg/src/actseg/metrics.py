"""Evaluation protocol: dataset-global one-to-one matching of predicted
clusters to ground-truth actions, then frame accuracy (MoF) and segment
F1 at >50% overlap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class MatchResult:
    """Injective partial mapping predicted label -> ground-truth label."""

    mapping: dict
    unmatched_predicted: list = field(default_factory=list)
    total_overlap: float = 0.0


def _assignment_total(matrix):
    if matrix.size == 0 or min(matrix.shape) == 0:
        return 0.0
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return float(matrix[rows, cols].sum())


def hungarian_match(overlap):
    """Optimal one-to-one matching maximizing total overlap.

    Rectangular matrices are padded with zero-overlap dummies. Among
    maximum-total matchings the lexicographically first one in (predicted
    index, gt index) order is returned; pairs with zero overlap are dropped
    and their predicted labels flagged as unmatched (background).
    """
    overlap = np.asarray(overlap, dtype=float)
    if overlap.size == 0:
        raise ValueError("empty overlap matrix")
    if overlap.ndim != 2:
        raise ValueError("overlap must be a (P, G) matrix")
    if np.any(overlap < 0):
        raise ValueError("overlaps must be non-negative")
    n_pred, n_gt = overlap.shape
    size = max(n_pred, n_gt)
    padded = np.zeros((size, size))
    padded[:n_pred, :n_gt] = overlap
    optimum = _assignment_total(padded)

    mapping = {}
    fixed = 0.0
    free_cols = list(range(size))
    for p in range(n_pred):
        rest_rows = list(range(p + 1, size))
        for g in free_cols:
            cols = [c for c in free_cols if c != g]
            total = fixed + padded[p, g] + _assignment_total(padded[np.ix_(rest_rows, cols)])
            if abs(total - optimum) < 1e-9:
                fixed += padded[p, g]
                free_cols.remove(g)
                if g < n_gt and overlap[p, g] > 0:
                    mapping[p] = g
                break
    unmatched = [p for p in range(n_pred) if p not in mapping]
    return MatchResult(mapping=mapping, unmatched_predicted=unmatched,
                       total_overlap=optimum)


def overlap_matrix(predictions, ground_truth, pred_labels, gt_labels):
    """Frame-overlap counts between predicted and ground-truth labels."""
    pred_index = {label: i for i, label in enumerate(pred_labels)}
    gt_index = {label: j for j, label in enumerate(gt_labels)}
    counts = np.zeros((len(pred_labels), len(gt_labels)), dtype=int)
    for video_id, pred in predictions.items():
        gt = ground_truth[video_id]
        if len(pred) != len(gt):
            raise ValueError(
                f"{video_id}: prediction length {len(pred)} != ground truth {len(gt)}"
            )
        for p, g in zip(pred, gt):
            counts[pred_index[int(p)], gt_index[int(g)]] += 1
    return counts


def match_labels(predictions, ground_truth):
    """Hungarian matching expressed over actual label values.

    Returns (MatchResult with label-valued mapping, pred_labels, gt_labels).
    """
    pred_labels = sorted({int(v) for seq in predictions.values() for v in seq})
    gt_labels = sorted({int(v) for seq in ground_truth.values() for v in seq})
    counts = overlap_matrix(predictions, ground_truth, pred_labels, gt_labels)
    result = hungarian_match(counts)
    mapping = {pred_labels[p]: gt_labels[g] for p, g in result.mapping.items()}
    unmatched = [pred_labels[p] for p in result.unmatched_predicted]
    return (MatchResult(mapping=mapping, unmatched_predicted=unmatched,
                        total_overlap=result.total_overlap),
            pred_labels, gt_labels)


def _mapped(seq, mapping):
    # unmatched labels map to a sentinel no ground-truth label uses
    return np.array([mapping.get(int(v), -(1 << 30)) for v in seq])


def mof(predictions, ground_truth, match, gt_background=None):
    """Fraction of frames whose mapped predicted label equals the gt label.

    When gt_background is given (multi-activity mode), background frames are
    excluded from the denominator; otherwise every frame counts.
    """
    correct = 0
    total = 0
    for video_id, pred in predictions.items():
        gt = np.asarray(ground_truth[video_id])
        if len(pred) != len(gt):
            raise ValueError(
                f"{video_id}: prediction length {len(pred)} != ground truth {len(gt)}"
            )
        mapped = _mapped(pred, match.mapping)
        keep = np.ones(len(gt), dtype=bool) if gt_background is None else gt != gt_background
        correct += int(((mapped == gt) & keep).sum())
        total += int(keep.sum())
    if total == 0:
        raise ValueError("no frames to evaluate")
    return correct / total


def segments_of(labels):
    """Maximal constant-label segments as (label, start, length)."""
    labels = np.asarray(labels)
    out = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            out.append((int(labels[start]), start, t - start))
            start = t
    return out


def f1_at_50(predictions, ground_truth, match, gt_background=None):
    """Segment precision/recall/F1 with a strict >50% overlap rule.

    A predicted segment is a true positive iff its mapped label equals a
    ground-truth segment's label and their intersection covers strictly more
    than half of that ground-truth segment; every ground-truth segment may be
    claimed once, greedily by descending overlap. Ground-truth background
    segments (if declared) are excluded from the recall denominator.
    """
    tp = 0
    n_pred_segments = 0
    n_gt_segments = 0
    for video_id, pred in predictions.items():
        gt = np.asarray(ground_truth[video_id])
        if len(pred) != len(gt):
            raise ValueError(
                f"{video_id}: prediction length {len(pred)} != ground truth {len(gt)}"
            )
        pred_segs = segments_of(_mapped(pred, match.mapping))
        gt_segs = [s for s in segments_of(gt)
                   if gt_background is None or s[0] != gt_background]
        n_pred_segments += len(pred_segs)
        n_gt_segments += len(gt_segs)
        candidates = []
        for i, (plabel, pstart, plen) in enumerate(pred_segs):
            for j, (glabel, gstart, glen) in enumerate(gt_segs):
                if plabel != glabel:
                    continue
                inter = min(pstart + plen, gstart + glen) - max(pstart, gstart)
                if inter * 2 > glen:
                    candidates.append((inter, i, j))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        used_pred = set()
        used_gt = set()
        for _, i, j in candidates:
            if i in used_pred or j in used_gt:
                continue
            used_pred.add(i)
            used_gt.add(j)
            tp += 1
    precision = tp / n_pred_segments if n_pred_segments else 0.0
    recall = tp / n_gt_segments if n_gt_segments else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1
