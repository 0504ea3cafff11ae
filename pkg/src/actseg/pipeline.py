"""End-to-end orchestration: stage-1 initialization, the variant-selected
second stage, the multi-activity split, and evaluation against ground truth."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from . import em, metrics, shuffle
from .clustering import (build_cluster_model, cluster_videos,
                         initial_pseudo_labels, kmeans, order_clusters)
from .embedding import embed_frames, time_targets, train_frame_embedding
from .hmm import frame_log_likelihoods, init_likelihood_model, train_likelihood_mlp, viterbi_decode
from .neural import SgdMomentum

log = logging.getLogger(__name__)

BACKGROUND_LABEL = 0


@dataclass
class StageOneArtifacts:
    embedding_model: object
    cluster_model: object
    embedded: dict              # video_id -> (T, embed_dim)
    pseudo_labels: dict         # video_id -> frame labels 1..N
    mean_lengths: np.ndarray


@dataclass
class PipelineResult:
    segmentations: dict                       # video_id -> Segmentation
    frame_labels: dict                        # video_id -> global predicted labels
    states: dict                              # activity index -> TrainState
    stage_one: dict                           # activity index -> StageOneArtifacts
    video_activities: dict = None             # video_id -> estimated activity
    metrics: dict = None
    match: metrics.MatchResult = None


def run_stage_one(videos, cfg, embedding_model=None, seed=None):
    """Frame embedding, k-means, time ordering, pseudo-labels, length init."""
    seed = cfg.seed if seed is None else seed
    if embedding_model is None:
        embedding_model = train_frame_embedding(
            videos, epochs=cfg.s1_epochs, learning_rate=cfg.s1_learning_rate,
            seed=seed, batch_size=cfg.s1_batch_size,
            hidden=cfg.hidden_dim, embed_dim=cfg.embed_dim)
    embedded = {v.video_id: embed_frames(embedding_model, v) for v in videos}
    points = np.vstack([embedded[v.video_id] for v in videos])
    positions = np.concatenate([time_targets(v.n_frames) for v in videos])
    assignments, raw_centers, _ = kmeans(
        points, cfg.n_actions, seed=[seed, 20], restarts=cfg.kmeans_restarts)
    relabeling = order_clusters(assignments, positions, cfg.n_actions)
    cluster_model = build_cluster_model(raw_centers, relabeling)
    pseudo_labels, mean_lengths = initial_pseudo_labels(embedded, cluster_model)
    return StageOneArtifacts(embedding_model, cluster_model, embedded,
                             pseudo_labels, mean_lengths)


def _decode_all(state, videos, cfg, config):
    segmentations = {}
    for video in videos:
        embedded = em.embed_video(state, video)
        ll = frame_log_likelihoods(state.likelihood_model, embedded)
        cap = em._decode_max_len(config, video.n_frames, state.hmm_params)
        seg, _ = viterbi_decode(ll, state.hmm_params, max_len=cap,
                                force_full_transcript=config.force_full_transcript)
        segmentations[video.video_id] = seg
    return segmentations


def _fit_no_alternation(videos, cfg, stage_one, seed, forced):
    """Shared path for the two non-alternating ablation variants.

    All components are learned separately from the stage-1 outputs: the
    classifier is fit on the k-means pseudo-labels over the initial
    action-level embedding, one decode provides segments for the SSL, the
    classifier is refit on the same pseudo-labels over the trained
    embedding, and a final decode yields the result. No parameter is
    re-estimated from decoded segmentations.
    """
    config = cfg.em_config(seed=seed, ssl_enabled=True, update_lengths=False,
                           force_full_transcript=forced)
    state = em.TrainState(
        likelihood_model=init_likelihood_model(
            cfg.embed_dim, cfg.n_actions, np.random.default_rng([seed, 3])),
        ssl_model=shuffle.build_ssl_model(stage_one.embedding_model.trunk, seed),
        embedding_model=stage_one.embedding_model,
        hmm_params=em.HmmParams(
            mean_lengths=stage_one.mean_lengths.copy(),
            start_constant=1.0 / cfg.n_actions,
            n_actions=cfg.n_actions,
        ),
    )
    state.ssl_optimizer = SgdMomentum(config.learning_rate, config.momentum)
    state.mlp_optimizer = SgdMomentum(config.mlp_learning_rate, config.momentum)

    def fit_classifier(tag):
        chunks = [em.embed_video(state, v) for v in videos]
        labels = [stage_one.pseudo_labels[v.video_id] for v in videos]
        train_likelihood_mlp(
            state.likelihood_model, np.vstack(chunks), np.concatenate(labels),
            config.mlp_epochs, state.mlp_optimizer,
            seed=[seed, 10, tag], batch_size=config.mlp_batch_size)

    fit_classifier(0)
    initial_segmentations = _decode_all(state, videos, cfg, config)
    # same SSL budget as the full model's warm-up, so the comparison
    # isolates the effect of alternation
    for epoch in range(1, config.ssl_warmup_epochs + 1):
        loss, _ = shuffle.ssl_train_epoch(
            state.ssl_model, videos, initial_segmentations, state.ssl_optimizer,
            seed=[seed, 11, epoch])
        state.progress.append({"epoch": epoch, "ssl_loss": loss})
    # refit once on the trained embedding; classifier starts fresh
    state.likelihood_model = init_likelihood_model(
        cfg.embed_dim, cfg.n_actions, np.random.default_rng([seed, 3]))
    state.mlp_optimizer = SgdMomentum(config.mlp_learning_rate, config.momentum)
    fit_classifier(1)
    state.segmentations = _decode_all(state, videos, cfg, config)
    return state


def run_variant(videos, cfg, stage_one, seed=None):
    """Dispatch the configured second stage; returns the final TrainState."""
    seed = cfg.seed if seed is None else seed
    init = em.InitArtifacts(pseudo_labels=stage_one.pseudo_labels,
                            mean_lengths=stage_one.mean_lengths)
    if cfg.variant == "asal":
        return em.fit(videos, cfg.em_config(seed=seed, ssl_enabled=True),
                      init, stage_one.embedding_model)
    if cfg.variant == "fte_hmm":
        return em.fit(videos, cfg.em_config(seed=seed, ssl_enabled=False),
                      init, stage_one.embedding_model)
    if cfg.variant == "actionshuffle_inithmm":
        return _fit_no_alternation(videos, cfg, stage_one, seed, forced=False)
    if cfg.variant == "actionshuffle_viterbi":
        return _fit_no_alternation(videos, cfg, stage_one, seed, forced=True)
    raise ValueError(f"unknown variant {cfg.variant!r}")


def evaluate_predictions(frame_labels, ground_truth, gt_background=None):
    """Global Hungarian matching followed by MoF and F1@50%."""
    match, _, gt_labels = metrics.match_labels(frame_labels, ground_truth)
    result = {"mof": metrics.mof(frame_labels, ground_truth, match,
                                 gt_background=gt_background)}
    precision, recall, f1 = metrics.f1_at_50(frame_labels, ground_truth, match,
                                             gt_background=gt_background)
    result.update({"precision": precision, "recall": recall, "f1": f1})
    inverse = {g: p for p, g in match.mapping.items()}
    for gt_label in gt_labels:
        if gt_background is not None and gt_label == gt_background:
            continue
        correct = 0
        total = 0
        for video_id, gt in ground_truth.items():
            gt = np.asarray(gt)
            mask = gt == gt_label
            total += int(mask.sum())
            if gt_label in inverse:
                pred = np.asarray(frame_labels[video_id])
                correct += int((pred[mask] == inverse[gt_label]).sum())
        result[f"acc_action_{gt_label}"] = correct / total if total else 0.0
    return result, match


def run_pipeline(cfg, videos, ground_truth=None):
    """Run stage 1 and the configured stage 2; evaluate when gt is given.

    In multi-activity mode the videos are first grouped with the soft
    bag-of-words clustering over a globally trained frame embedding; each
    group is then segmented separately (fresh trunk copy per group so SSL
    updates stay activity-local) and predicted labels are globalized as
    activity * N + action before one dataset-wide Hungarian matching in
    which unmatched predicted clusters become background.
    """
    videos = list(videos)
    if not cfg.multi_activity:
        stage_one = run_stage_one(videos, cfg)
        state = run_variant(videos, cfg, stage_one)
        frame_labels = {vid: seg.frame_labels()
                        for vid, seg in state.segmentations.items()}
        result = PipelineResult(
            segmentations=dict(state.segmentations), frame_labels=frame_labels,
            states={0: state}, stage_one={0: stage_one})
    else:
        embedding_model = train_frame_embedding(
            videos, epochs=cfg.s1_epochs, learning_rate=cfg.s1_learning_rate,
            seed=cfg.seed, batch_size=cfg.s1_batch_size,
            hidden=cfg.hidden_dim, embed_dim=cfg.embed_dim)
        embedded = {v.video_id: embed_frames(embedding_model, v) for v in videos}
        points = np.vstack(list(embedded.values()))
        assignments, raw_centers, _ = kmeans(
            points, cfg.n_actions, seed=[cfg.seed, 21], restarts=cfg.kmeans_restarts)
        positions = np.concatenate([time_targets(v.n_frames) for v in videos])
        vocab_model = build_cluster_model(
            raw_centers, order_clusters(assignments, positions, cfg.n_actions))
        video_activities = cluster_videos(
            embedded, vocab_model, cfg.n_activities, seed=cfg.seed)
        segmentations = {}
        frame_labels = {}
        states = {}
        stage_ones = {}
        for activity in range(cfg.n_activities):
            group = [v for v in videos if video_activities[v.video_id] == activity]
            if not group:
                log.warning("activity cluster %d is empty", activity)
                continue
            group_seed = cfg.seed * 100003 + activity + 1
            group_model = copy.deepcopy(embedding_model)
            stage_one = run_stage_one(group, cfg, embedding_model=group_model,
                                      seed=group_seed)
            state = run_variant(group, cfg, stage_one, seed=group_seed)
            states[activity] = state
            stage_ones[activity] = stage_one
            for vid, seg in state.segmentations.items():
                segmentations[vid] = seg
                frame_labels[vid] = seg.frame_labels() + activity * cfg.n_actions
        result = PipelineResult(
            segmentations=segmentations, frame_labels=frame_labels,
            states=states, stage_one=stage_ones,
            video_activities=video_activities)

    if ground_truth is not None:
        covered = {vid: labels for vid, labels in result.frame_labels.items()
                   if vid in ground_truth}
        gt_background = BACKGROUND_LABEL if cfg.multi_activity else None
        result.metrics, result.match = evaluate_predictions(
            covered, {vid: ground_truth[vid] for vid in covered},
            gt_background=gt_background)
    return result
