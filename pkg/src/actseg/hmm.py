"""Generative segmentation model and its exact MAP decoding.

A video is scored as the product of per-frame likelihoods (a softmax MLP
over embedded frames, divided by a uniform class prior), Poisson segment
lengths, and a monotone transition model that forbids label decreases and
penalizes long label skips. Decoding is an explicit-duration Viterbi
dynamic program over (frame, label) states, exact for a given per-segment
length cap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .neural import init_dense, mlp_apply, mlp_backward, softmax_xent_batch

log = logging.getLogger(__name__)

NEG_INF = -np.inf


@dataclass
class Segmentation:
    """Ordered (action, length) pairs covering a video exactly.

    Action labels are strictly increasing integers in 1..N, so every label
    occurs at most once and the transcript respects the initial ordering.
    """

    actions: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=int)
        self.lengths = np.asarray(self.lengths, dtype=int)
        if self.actions.shape != self.lengths.shape or self.actions.ndim != 1:
            raise ValueError("actions and lengths must be aligned vectors")
        if len(self.actions) == 0:
            raise ValueError("segmentation must contain at least one segment")
        if np.any(self.lengths < 1):
            raise ValueError("segment lengths must be positive")
        if np.any(np.diff(self.actions) <= 0):
            raise ValueError("action labels must be strictly increasing")

    @property
    def n_frames(self):
        return int(self.lengths.sum())

    @property
    def n_segments(self):
        return len(self.actions)

    def frame_labels(self):
        return np.repeat(self.actions, self.lengths)

    def validate(self, n_actions):
        if self.actions[0] < 1 or self.actions[-1] > n_actions:
            raise ValueError("action labels out of range 1..N")
        if self.n_segments > n_actions:
            raise ValueError("more segments than actions")


@dataclass
class HmmParams:
    mean_lengths: np.ndarray   # Poisson mean per action, > 0
    start_constant: float      # constant start weight, > 0
    n_actions: int

    def __post_init__(self):
        self.mean_lengths = np.asarray(self.mean_lengths, dtype=float)
        if self.mean_lengths.shape != (self.n_actions,):
            raise ValueError("one mean length per action required")
        if np.any(self.mean_lengths <= 0):
            raise ValueError("mean lengths must be positive")
        if self.start_constant <= 0:
            raise ValueError("start constant must be positive")


@dataclass
class LikelihoodModel:
    """Framewise classifier: embed_dim -> hidden -> N logits, softmax on top."""

    mlp: list

    @property
    def n_actions(self):
        return self.mlp[-1].n_out


def init_likelihood_model(embed_dim, n_actions, rng, hidden=40):
    return LikelihoodModel(mlp=[
        init_dense(embed_dim, hidden, rng, "relu"),
        init_dense(hidden, n_actions, rng, "identity"),
    ])


def frame_log_likelihoods(model, embedded):
    """log p(x_t | c) for every frame and action, as a (T, N) matrix.

    Computed as the log softmax score of the classifier minus the log of the
    uniform class prior, i.e. plus log N. The prior shifts every entry by the
    same constant, so per-frame argmaxes and MAP segmentations are unchanged
    by it.
    """
    logits = mlp_apply(model.mlp, np.asarray(embedded, dtype=float))
    if logits.ndim == 1:
        logits = logits[None, :]
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite classifier logits")
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    return logits - lse + math.log(model.n_actions)


def poisson_log_pmf(length, mean_length):
    """log[ lambda^l e^-lambda / l! ] computed in log space."""
    if length < 1 or int(length) != length:
        raise ValueError("length must be a positive integer")
    if mean_length <= 0:
        raise ValueError("mean length must be positive")
    length = int(length)
    return length * math.log(mean_length) - math.lgamma(length + 1) - mean_length


def duration_log_table(max_len, mean_lengths):
    """(max_len, N) table of Poisson log pmfs for l = 1..max_len."""
    ls = np.arange(1, max_len + 1, dtype=float)
    lam = np.asarray(mean_lengths, dtype=float)
    return ls[:, None] * np.log(lam)[None, :] - gammaln(ls + 1)[:, None] - lam[None, :]


def transition_log_matrix(params):
    """(N, N) matrix of log p(c_to | c_from); -inf wherever c_to <= c_from.

    For c_to > c_from the unnormalized weight is
    (lambda_from + lambda_to) / sum(lambda_from..lambda_to), normalized so
    each row with any successor sums to one. Longer skips get strictly
    smaller weights when the mean lengths are constant.
    """
    lam = params.mean_lengths
    n = params.n_actions
    mat = np.full((n, n), NEG_INF)
    for i in range(n - 1):
        w = np.empty(n - 1 - i)
        for k, j in enumerate(range(i + 1, n)):
            w[k] = (lam[i] + lam[j]) / lam[i:j + 1].sum()
        mat[i, i + 1:] = np.log(w) - math.log(w.sum())
    return mat


def transition_log_prob(c_from, c_to, mean_lengths, n_actions):
    """log p(c_to | c_from) for 1-based labels; -inf for non-increasing moves."""
    if not (1 <= c_from <= n_actions and 1 <= c_to <= n_actions):
        raise ValueError("labels must lie in 1..N")
    params = HmmParams(mean_lengths=np.asarray(mean_lengths, dtype=float),
                       start_constant=1.0, n_actions=n_actions)
    return float(transition_log_matrix(params)[c_from - 1, c_to - 1])


def default_max_len(n_frames, mean_lengths, n_actions=None):
    """Per-segment length cap: Poisson mass beyond 6*lambda is negligible.

    When the action count is known the cap is floored at ceil(T / N) so that
    covering the video stays admissible even under small estimated means.
    """
    cap = math.ceil(6.0 * float(np.max(mean_lengths)))
    if n_actions is not None:
        cap = max(cap, math.ceil(n_frames / n_actions))
    return int(min(n_frames, cap))


def viterbi_decode(log_likelihoods, params, max_len=None, force_full_transcript=False):
    """Exact MAP segmentation under the duration-explicit monotone model.

    Args:
        log_likelihoods: (T, N) matrix of per-frame log likelihoods.
        params: HmmParams with mean lengths and the start constant.
        max_len: per-segment length cap; None applies the default policy
            min(T, ceil(6 * max mean length)). Pass T for exact decoding.
        force_full_transcript: restrict decoding to the full ordered
            transcript [1..N] (start at 1, only +1 transitions, end at N).

    Returns:
        (Segmentation, map_log_posterior) where the score is the unnormalized
        log posterior of the returned segmentation, including the start term
        log(start_constant).

    Ties are resolved by a fixed preference applied from the end of the
    video: smaller final action label first, then shorter final segment,
    then recursively the same rule on the remaining prefix.
    """
    ll = np.asarray(log_likelihoods, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 1:
        raise ValueError("log likelihoods must be a non-empty (T, N) matrix")
    n_frames, n = ll.shape
    if n != params.n_actions:
        raise ValueError("likelihood columns must match the action count")
    if max_len is None:
        max_len = default_max_len(n_frames, params.mean_lengths, params.n_actions)
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    cap = min(int(max_len), n_frames)

    dur = duration_log_table(cap, params.mean_lengths)
    if force_full_transcript:
        ltrans = np.full((n, n), NEG_INF)
        for c in range(n - 1):
            ltrans[c, c + 1] = 0.0
        start = np.full(n, NEG_INF)
        start[0] = math.log(params.start_constant)
    else:
        ltrans = transition_log_matrix(params)
        start = np.full(n, math.log(params.start_constant))

    cum = np.vstack([np.zeros((1, n)), np.cumsum(ll, axis=0)])
    # best[t, c]: top score of a segmentation of frames 1..t ending in label c+1
    best = np.full((n_frames + 1, n), NEG_INF)
    # incoming[t, c]: top score of a prefix ending at t plus the transition
    # into a next segment labeled c+1 (t = 0 holds the start term)
    incoming = np.full((n_frames + 1, n), NEG_INF)
    incoming[0] = start
    back_len = np.zeros((n_frames + 1, n), dtype=int)
    back_prev = np.full((n_frames + 1, n), -1, dtype=int)

    for t in range(1, n_frames + 1):
        lmax = min(cap, t)
        starts = t - np.arange(1, lmax + 1)          # l ascending: t-1, t-2, ...
        for c in range(n):
            cand = incoming[starts, c] + (cum[t, c] - cum[starts, c]) + dur[:lmax, c]
            pick = int(np.argmax(cand))              # first max -> shortest l
            best[t, c] = cand[pick]
            back_len[t, c] = pick + 1
        if t < n_frames:
            for c in range(1, n):
                opts = best[t, :c] + ltrans[:c, c]
                pick = int(np.argmax(opts))          # first max -> smallest label
                incoming[t, c] = opts[pick]
                back_prev[t, c] = pick

    final = best[n_frames].copy()
    if force_full_transcript:
        final[:n - 1] = NEG_INF
    if not np.any(np.isfinite(final)):
        raise ValueError(
            "no admissible segmentation (all paths have zero probability; "
            f"T={n_frames}, N={n}, max_len={cap})"
        )
    c = int(np.argmax(final))                        # first max -> smallest label
    score = float(final[c])

    actions, lengths = [], []
    t = n_frames
    while True:
        length = int(back_len[t, c])
        actions.append(c + 1)
        lengths.append(length)
        t -= length
        if t == 0:
            break
        c = int(back_prev[t, c])
    seg = Segmentation(actions=np.array(actions[::-1]), lengths=np.array(lengths[::-1]))
    seg.validate(n)
    return seg, score


def train_likelihood_mlp(model, embeddings, labels, epochs, optimizer,
                         seed=0, batch_size=256):
    """Cross-entropy training of the framewise classifier on pseudo-labels.

    labels are 1-based action labels, one per embedded frame. Returns the
    per-epoch mean loss history; the model is updated in place.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = embeddings.shape[0]
    if labels.shape != (n,):
        raise ValueError("one label per frame required")
    if labels.min() < 1 or labels.max() > model.n_actions:
        raise ValueError(
            f"labels must lie in 1..{model.n_actions}, got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    classes = labels - 1
    params = [p for layer in model.mlp for p in layer.params()]
    shuffler = np.random.default_rng(seed)
    history = []
    for _ in range(int(epochs)):
        order = shuffler.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits = mlp_apply(model.mlp, embeddings[idx])
            loss, dlogits = softmax_xent_batch(logits, classes[idx])
            total += loss * len(idx)
            grads, _ = mlp_backward(model.mlp, embeddings[idx], dlogits)
            optimizer.step(params, [g for pair in grads for g in pair])
        history.append(total / n)
    return history


def mean_cross_entropy(model, embeddings, labels):
    """Full-batch mean cross-entropy of the classifier (no update)."""
    logits = mlp_apply(model.mlp, np.asarray(embeddings, dtype=float))
    loss, _ = softmax_xent_batch(logits, np.asarray(labels, dtype=int) - 1)
    return float(loss)
