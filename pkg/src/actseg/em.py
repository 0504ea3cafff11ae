"""Generalized EM loop alternating MAP segmentation with parameter updates.

The E-step decodes every video and scores it with the per-video normalized
joint log likelihood (the Q value under the MAP approximation). The M-step
improves that objective: the SSL refreshes the action-level embedding, the
likelihood classifier is retrained on the frame labels induced by the
current segmentations over the refreshed embeddings, and the Poisson means
move to the per-video average of observed segment lengths. The loop stops
once the mean Q value changes by less than epsilon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import shuffle
from .embedding import embed_frames
from .hmm import (HmmParams, default_max_len, frame_log_likelihoods,
                  init_likelihood_model, poisson_log_pmf,
                  train_likelihood_mlp, transition_log_matrix, viterbi_decode)
from .neural import SgdMomentum

log = logging.getLogger(__name__)


@dataclass
class EmConfig:
    max_epochs: int = 20
    epsilon: float = 1e-3
    learning_rate: float = 0.001       # SSL step size
    momentum: float = 0.9
    seed: int = 0
    max_len_policy: str = "auto"       # "auto": min(T, ceil(6*max lambda)); "exact": T
    mlp_epochs: int = 200              # full-batch classifier steps per M-step
    mlp_learning_rate: float = 0.5
    mlp_batch_size: int = 1 << 30      # full batch
    ssl_enabled: bool = True
    ssl_warmup_epochs: int = 60        # SSL rounds on the initial decode
    update_lengths: bool = True
    force_full_transcript: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.max_len_policy not in ("auto", "exact"):
            raise ValueError("max_len_policy must be 'auto' or 'exact'")


@dataclass
class InitArtifacts:
    """Stage-1 outputs that seed the loop: frame pseudo-labels and the
    initial Poisson means from their run-length statistics."""

    pseudo_labels: dict
    mean_lengths: np.ndarray


@dataclass
class TrainState:
    likelihood_model: object
    ssl_model: object            # None when the SSL is disabled
    embedding_model: object
    hmm_params: HmmParams
    epoch: int = 0
    q_history: list = field(default_factory=list)
    segmentations: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    converged: bool = False
    progress: list = field(default_factory=list)
    ssl_optimizer: SgdMomentum = None
    mlp_optimizer: SgdMomentum = None


def embed_video(state, video):
    """Action-level embedding when the SSL is active, frame-level otherwise."""
    if state.ssl_model is not None:
        return shuffle.action_embed_frames(state.ssl_model, video)
    return embed_frames(state.embedding_model, video)


def _decode_max_len(config, n_frames, params):
    if config.max_len_policy == "exact":
        return n_frames
    return default_max_len(n_frames, params.mean_lengths, params.n_actions)


def e_step(state, dataset, config):
    """Decode every video; Q per video is the MAP log posterior over T.

    Videos with no admissible segmentation are excluded and recorded with a
    warning. Returns (segmentations, mean_q, skipped).
    """
    segmentations = {}
    skipped = {}
    q_values = []
    for video in dataset:
        embedded = embed_video(state, video)
        ll = frame_log_likelihoods(state.likelihood_model, embedded)
        cap = _decode_max_len(config, video.n_frames, state.hmm_params)
        previous = state.segmentations.get(video.video_id)
        if previous is not None and config.max_len_policy == "auto":
            # keep last epoch's path admissible so the objective cannot drop
            cap = max(cap, int(previous.lengths.max()))
        try:
            seg, score = viterbi_decode(
                ll, state.hmm_params, max_len=cap,
                force_full_transcript=config.force_full_transcript)
        except ValueError as exc:
            log.warning("skipping %s in E-step: %s", video.video_id, exc)
            skipped[video.video_id] = str(exc)
            continue
        segmentations[video.video_id] = seg
        q_values.append(score / video.n_frames)
    if not q_values:
        raise RuntimeError("E-step produced no admissible segmentation")
    return segmentations, float(np.mean(q_values)), skipped


def q_of_segmentations(state, dataset, segmentations):
    """Mean per-video normalized joint log likelihood at fixed segmentations.

    Recomputes the frame, duration, transition, and start terms under the
    current parameters; this is the quantity the M-step must not decrease.
    """
    ltrans = transition_log_matrix(state.hmm_params)
    lam = state.hmm_params.mean_lengths
    start = np.log(state.hmm_params.start_constant)
    values = []
    for video in dataset:
        seg = segmentations.get(video.video_id)
        if seg is None:
            continue
        embedded = embed_video(state, video)
        ll = frame_log_likelihoods(state.likelihood_model, embedded)
        frame = ll[np.arange(video.n_frames), seg.frame_labels() - 1].sum()
        duration = sum(poisson_log_pmf(int(l), lam[c - 1])
                       for c, l in zip(seg.actions, seg.lengths))
        trans = sum(ltrans[a - 1, b - 1]
                    for a, b in zip(seg.actions[:-1], seg.actions[1:]))
        values.append((frame + duration + trans + start) / video.n_frames)
    if not values:
        raise ValueError("no segmented videos to score")
    return float(np.mean(values))


def _param_arrays(state):
    arrays = [p for layer in state.likelihood_model.mlp for p in layer.params()]
    if state.ssl_model is not None:
        arrays += shuffle.ssl_params(state.ssl_model)
    return arrays


def _snapshot_weights(state):
    params = [a.copy() for a in _param_arrays(state)]
    velocities = []
    for opt in (state.ssl_optimizer, state.mlp_optimizer):
        if opt is None or opt.velocity is None:
            velocities.append(None)
        else:
            velocities.append([v.copy() for v in opt.velocity])
    return params, velocities


def _restore_weights(state, snapshot):
    params, velocities = snapshot
    for dst, src in zip(_param_arrays(state), params):
        np.copyto(dst, src)
    for opt, saved in zip((state.ssl_optimizer, state.mlp_optimizer), velocities):
        if opt is None:
            continue
        if saved is None:
            opt.velocity = None
        else:
            for dst, src in zip(opt.velocity, saved):
                np.copyto(dst, src)


def _train_classifier(state, dataset, segmentations, config, epoch):
    chunks, labels = [], []
    for video in dataset:
        seg = segmentations.get(video.video_id)
        if seg is None:
            continue
        chunks.append(embed_video(state, video))
        labels.append(seg.frame_labels())
    history = train_likelihood_mlp(
        state.likelihood_model, np.vstack(chunks), np.concatenate(labels),
        config.mlp_epochs, state.mlp_optimizer,
        seed=[config.seed, 12, epoch], batch_size=config.mlp_batch_size)
    return history[-1] if history else None


def m_step_weights(state, dataset, segmentations, config, epoch=0):
    """Improve the weight part of the objective for fixed segmentations.

    Proposes one SSL pass (refreshing the embeddings) followed by classifier
    training on the frame labels the segmentations induce. Candidates that
    would lower the objective are rolled back: first the SSL movement (the
    classifier is then retrained on unchanged embeddings), finally the whole
    update, which keeps the generalized-EM improvement contract exact.
    """
    losses = {}
    base_q = q_of_segmentations(state, dataset, segmentations)
    before = _snapshot_weights(state)

    def rollback():
        _restore_weights(state, before)

    if state.ssl_model is not None:
        ssl_loss, ssl_skipped = shuffle.ssl_train_epoch(
            state.ssl_model, dataset, segmentations, state.ssl_optimizer,
            seed=[config.seed, 11, epoch])
        losses["ssl_loss"] = ssl_loss
        losses["ssl_skipped"] = ssl_skipped
    losses["mlp_loss"] = _train_classifier(state, dataset, segmentations, config, epoch)
    if q_of_segmentations(state, dataset, segmentations) >= base_q:
        return losses

    if state.ssl_model is not None:
        # retry without the embedding movement
        rollback()
        losses["ssl_rejected"] = 1
        losses["mlp_loss"] = _train_classifier(state, dataset, segmentations,
                                               config, epoch)
        if q_of_segmentations(state, dataset, segmentations) >= base_q:
            return losses
    rollback()
    losses["weights_rejected"] = 1
    return losses


def m_step_lengths(old_mean_lengths, segmentations):
    """Move every Poisson mean toward per-video average segment lengths.

    Each video contributes (its mean length of action c) - lambda_c, divided
    by the number of segmented videos; videos without action c contribute
    nothing. Actions absent everywhere keep their old mean.
    """
    old = np.asarray(old_mean_lengths, dtype=float)
    if not segmentations:
        raise ValueError("at least one segmented video required")
    n_videos = len(segmentations)
    new = old.copy()
    for c in range(1, len(old) + 1):
        correction = 0.0
        seen = False
        for seg in segmentations.values():
            mask = seg.actions == c
            if not np.any(mask):
                continue
            seen = True
            correction += float(seg.lengths[mask].mean()) - old[c - 1]
        if seen:
            new[c - 1] = old[c - 1] + correction / n_videos
        else:
            log.warning("action %d absent from all segmentations; mean length kept", c)
    if np.any(new <= 0):
        raise RuntimeError("length update produced a non-positive mean")
    return new


def _apply_length_update(state, dataset, segmentations):
    """Propose the length update; keep it only if the objective improves.

    The update maximizes the duration term exactly but also moves the
    transition weights, so a net decrease is possible and rejected.
    """
    base_q = q_of_segmentations(state, dataset, segmentations)
    candidate = HmmParams(
        mean_lengths=m_step_lengths(state.hmm_params.mean_lengths, segmentations),
        start_constant=state.hmm_params.start_constant,
        n_actions=state.hmm_params.n_actions,
    )
    old = state.hmm_params
    state.hmm_params = candidate
    if q_of_segmentations(state, dataset, segmentations) < base_q:
        state.hmm_params = old
        return False
    return True


def fit(dataset, config, init, embedding_model, likelihood_model=None,
        ssl_model=None):
    """Run the alternating loop until |delta mean Q| < epsilon or max_epochs.

    init supplies stage-1 pseudo-labels (used to fit the classifier before
    the first E-step) and the initial Poisson means. The SSL model shares
    the embedding trunk; passing ssl_model/likelihood_model overrides the
    defaults (used by ablation variants).
    """
    dataset = list(dataset)
    n_actions = len(init.mean_lengths)
    state = TrainState(
        likelihood_model=likelihood_model,
        ssl_model=ssl_model,
        embedding_model=embedding_model,
        hmm_params=HmmParams(
            mean_lengths=np.asarray(init.mean_lengths, dtype=float),
            start_constant=1.0 / n_actions,
            n_actions=n_actions,
        ),
    )
    if state.ssl_model is None and config.ssl_enabled:
        state.ssl_model = shuffle.build_ssl_model(embedding_model.trunk, config.seed)
    if state.likelihood_model is None:
        state.likelihood_model = init_likelihood_model(
            embedding_model.embed_dim, n_actions,
            np.random.default_rng([config.seed, 3]))
    state.ssl_optimizer = SgdMomentum(config.learning_rate, config.momentum)
    state.mlp_optimizer = SgdMomentum(config.mlp_learning_rate, config.momentum)

    # seed the classifier with the stage-1 pseudo-labels
    chunks, labels = [], []
    for video in dataset:
        if video.video_id in init.pseudo_labels:
            chunks.append(embed_video(state, video))
            labels.append(init.pseudo_labels[video.video_id])
    train_likelihood_mlp(
        state.likelihood_model, np.vstack(chunks), np.concatenate(labels),
        config.mlp_epochs, state.mlp_optimizer,
        seed=[config.seed, 10], batch_size=config.mlp_batch_size)

    # epoch 0: bring every component to a settled starting point before the
    # alternating loop, so early SSL movement does not perturb the Q trace
    initial_segmentations, _, _ = e_step(state, dataset, config)
    if state.ssl_model is not None:
        for warmup in range(config.ssl_warmup_epochs):
            shuffle.ssl_train_epoch(
                state.ssl_model, dataset, initial_segmentations,
                state.ssl_optimizer, seed=[config.seed, 13, warmup])
    m_step_weights(state, dataset, initial_segmentations, config, epoch=0)
    if config.update_lengths:
        state.hmm_params = HmmParams(
            mean_lengths=m_step_lengths(state.hmm_params.mean_lengths,
                                        initial_segmentations),
            start_constant=state.hmm_params.start_constant,
            n_actions=state.hmm_params.n_actions,
        )
    state.segmentations = initial_segmentations
    state.epoch = 0

    previous_q = None
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        segmentations, mean_q, skipped = e_step(state, dataset, config)
        if not np.isfinite(mean_q):
            raise RuntimeError(
                f"divergence: mean Q is {mean_q} at epoch {epoch}; "
                f"lambdas={state.hmm_params.mean_lengths.tolist()}"
            )
        state.segmentations = segmentations
        state.skipped = skipped
        state.q_history.append(mean_q)
        record = {
            "epoch": epoch,
            "mean_q": mean_q,
            "lambdas": state.hmm_params.mean_lengths.tolist(),
            "skipped": len(skipped),
        }
        if previous_q is not None and abs(mean_q - previous_q) < config.epsilon:
            state.converged = True
            state.progress.append(record)
            log.info("converged at epoch %d (|dQ|=%.2e)", epoch, abs(mean_q - previous_q))
            break
        previous_q = mean_q
        losses = m_step_weights(state, dataset, segmentations, config, epoch=epoch)
        record.update(losses)
        if config.update_lengths:
            record["lengths_accepted"] = _apply_length_update(state, dataset,
                                                              segmentations)
        state.progress.append(record)
    return state
