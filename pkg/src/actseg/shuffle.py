"""Action-shuffle self-supervision.

Positive samples are 3 action segments (5 consecutive frames each) drawn
from a video in their original order; negatives permute the 3 segments. A
shared MLP (the same parameter arrays as the frame-embedding trunk) feeds a
vanilla RNN whose final hidden state is classified by a sigmoid head. The
RNN's single-step hidden response to one embedded frame, from the zero
state, is the per-frame action-level embedding consumed by the HMM.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .neural import (DenseLayer, RnnCell, bce_loss, init_dense, init_rnn,
                     mlp_apply, mlp_backward, rnn_backward, rnn_forward,
                     sigmoid)

log = logging.getLogger(__name__)

SEGMENTS_PER_SAMPLE = 3
FRAMES_PER_SEGMENT = 5
SAMPLE_FRAMES = SEGMENTS_PER_SAMPLE * FRAMES_PER_SEGMENT

# the 5 non-identity permutations of 3 items
_NEGATIVE_PERMS = ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


@dataclass
class ShuffleSample:
    frames: np.ndarray                  # (15, D) raw feature vectors
    label: int                          # 1 = order preserved, 0 = shuffled
    source_video: str
    segment_action_labels: tuple

    def validate(self):
        if self.frames.shape[0] != SAMPLE_FRAMES:
            raise ValueError("sample must hold exactly 3 segments of 5 frames")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if len(self.segment_action_labels) != SEGMENTS_PER_SAMPLE:
            raise ValueError("sample must record 3 segment labels")
        ordered = list(self.segment_action_labels) == sorted(self.segment_action_labels)
        if bool(self.label) != ordered:
            raise ValueError("label inconsistent with segment ordering")


@dataclass
class SslModel:
    shared_mlp: list    # same DenseLayer objects as the embedding trunk
    rnn: RnnCell
    head: DenseLayer    # hidden -> 1 logit; sigmoid applied at readout

    @property
    def embed_dim(self):
        return self.shared_mlp[-1].n_out


def build_ssl_model(trunk, seed, hidden=20):
    rng = np.random.default_rng([seed, 2])
    embed_dim = trunk[-1].n_out
    return SslModel(
        shared_mlp=trunk,
        rnn=init_rnn(embed_dim, hidden, rng),
        head=init_dense(hidden, 1, rng, "identity"),
    )


def ssl_params(model):
    return (
        [p for layer in model.shared_mlp for p in layer.params()]
        + model.rnn.params()
        + model.head.params()
    )


def eligible_segments(segmentation):
    """(action, start, length) for every segment long enough to sample from."""
    out = []
    start = 0
    for action, length in zip(segmentation.actions, segmentation.lengths):
        if length >= FRAMES_PER_SEGMENT:
            out.append((int(action), start, int(length)))
        start += int(length)
    return out


def sample_pair(video, segmentation, rng):
    """Draw one positive and one negative sample from a segmented video.

    Picks 3 distinct eligible segments uniformly, one uniform 5-frame window
    inside each; the positive keeps video order, the negative applies a
    uniform non-identity permutation of the same windows. Returns None when
    fewer than 3 segments are long enough.
    """
    segments = eligible_segments(segmentation)
    if len(segments) < SEGMENTS_PER_SAMPLE:
        return None
    chosen = sorted(rng.choice(len(segments), size=SEGMENTS_PER_SAMPLE, replace=False))
    windows = []
    labels = []
    for idx in chosen:
        action, start, length = segments[idx]
        offset = int(rng.integers(0, length - FRAMES_PER_SEGMENT + 1))
        lo = start + offset
        windows.append(video.features[lo:lo + FRAMES_PER_SEGMENT])
        labels.append(action)
    perm = _NEGATIVE_PERMS[int(rng.integers(0, len(_NEGATIVE_PERMS)))]
    positive = ShuffleSample(
        frames=np.vstack(windows), label=1, source_video=video.video_id,
        segment_action_labels=tuple(labels),
    )
    negative = ShuffleSample(
        frames=np.vstack([windows[i] for i in perm]), label=0,
        source_video=video.video_id,
        segment_action_labels=tuple(labels[i] for i in perm),
    )
    return positive, negative


def classify(model, frames):
    """Probability that the 15-frame sample is in original order."""
    embedded = mlp_apply(model.shared_mlp, frames)
    hidden = rnn_forward(model.rnn, embedded, np.zeros(model.rnn.n_hidden))
    logit = float(model.head.weight[0] @ hidden[-1]) + model.head.bias[0]
    return float(sigmoid(logit))


def classify_loss_grads(model, frames, label):
    """BCE loss of one sample and gradients for every SSL parameter."""
    embedded = mlp_apply(model.shared_mlp, frames)
    hidden = rnn_forward(model.rnn, embedded, np.zeros(model.rnn.n_hidden))
    logit = float(model.head.weight[0] @ hidden[-1]) + model.head.bias[0]
    p = float(sigmoid(logit))
    loss, dlogit = bce_loss(p, label)

    dhead_w = dlogit * hidden[-1][None, :]
    dhead_b = np.array([dlogit])
    upstream = np.zeros_like(hidden)
    upstream[-1] = dlogit * model.head.weight[0]
    (dw_in, dw_hid, dbias), dembedded, _ = rnn_backward(
        model.rnn, embedded, np.zeros(model.rnn.n_hidden), hidden, upstream)
    mlp_grads, _ = mlp_backward(model.shared_mlp, frames, dembedded)
    grads = (
        [g for pair in mlp_grads for g in pair]
        + [dw_in, dw_hid, dbias]
        + [dhead_w, dhead_b]
    )
    return loss, grads


def _video_rng(entropy, video_id):
    seq = list(entropy) if isinstance(entropy, (list, tuple)) else [entropy]
    return np.random.default_rng(seq + [zlib.crc32(video_id.encode())])


def ssl_train_epoch(model, dataset, segmentations, optimizer, seed=0,
                    validate_samples=False):
    """One SSL pass: a positive and a negative sample per eligible video.

    Each video draws from an rng keyed on (seed, video id), so results are
    independent of iteration order. Videos with fewer than 3 eligible
    segments are skipped and counted. Returns (mean BCE loss, skipped count).
    """
    params = ssl_params(model)
    losses = []
    skipped = 0
    for video in dataset:
        segmentation = segmentations.get(video.video_id)
        if segmentation is None:
            skipped += 1
            continue
        pair = sample_pair(video, segmentation, _video_rng(seed, video.video_id))
        if pair is None:
            skipped += 1
            continue
        for sample in pair:
            if validate_samples:
                sample.validate()
            loss, grads = classify_loss_grads(model, sample.frames, sample.label)
            optimizer.step(params, grads)
            losses.append(loss)
    if not losses:
        raise RuntimeError("SSL starved: no video had 3 sampleable segments")
    return float(np.mean(losses)), skipped


def evaluate_accuracy(model, dataset, segmentations, seed=0, rounds=5):
    """Accuracy on freshly drawn positive/negative pairs (no updates)."""
    correct = 0
    total = 0
    for r in range(rounds):
        for video in dataset:
            segmentation = segmentations.get(video.video_id)
            if segmentation is None:
                continue
            pair = sample_pair(video, segmentation,
                               _video_rng([seed, r], video.video_id))
            if pair is None:
                continue
            for sample in pair:
                predicted = 1 if classify(model, sample.frames) >= 0.5 else 0
                correct += int(predicted == sample.label)
                total += 1
    if total == 0:
        raise RuntimeError("SSL starved: no video had 3 sampleable segments")
    return correct / total


def action_embed_frames(model, video):
    """Per-frame action-level embedding, (T, H).

    Row t is the RNN's one-step hidden response tanh(w_in mlp(x_t) + bias)
    from the zero state, applied to each frame independently.
    """
    embedded = mlp_apply(model.shared_mlp, video.features)
    return np.tanh(embedded @ model.rnn.w_in.T + model.rnn.bias)
