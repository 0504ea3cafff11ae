"""Frame-level temporal embedding.

A small MLP is trained to regress every frame's normalized time position
(t/T with 1-indexed t, so the last frame maps to exactly 1). The 20-d hidden
layer is the frame embedding; the scalar regression head is discarded after
this stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .neural import DenseLayer, SgdMomentum, init_dense, mlp_apply, mlp_backward

log = logging.getLogger(__name__)

EMBED_DIM = 20
HIDDEN_DIM = 40


@dataclass
class FrameSequence:
    """One video: a (T, D) matrix of frame features plus an identifier."""

    video_id: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"{self.video_id}: features must be a non-empty (T, D) matrix")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.video_id}: features contain non-finite values")

    @property
    def n_frames(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class EmbeddingModel:
    trunk: list          # DenseLayers D -> hidden -> embed
    head: DenseLayer     # embed -> 1 regression head, unused after training
    loss_history: list = field(default_factory=list)

    @property
    def embed_dim(self):
        return self.trunk[-1].n_out


def time_targets(n_frames):
    """Normalized positions t/T for t = 1..T; strictly positive, last is 1."""
    return np.arange(1, n_frames + 1, dtype=float) / n_frames


def build_embedding_model(dim, rng, hidden=HIDDEN_DIM, embed_dim=EMBED_DIM):
    trunk = [
        init_dense(dim, hidden, rng, "relu"),
        init_dense(hidden, embed_dim, rng, "relu"),
    ]
    head = init_dense(embed_dim, 1, rng, "identity")
    return EmbeddingModel(trunk=trunk, head=head)


def train_frame_embedding(dataset, epochs=30, learning_rate=0.01, seed=0,
                          batch_size=512, momentum=0.9,
                          hidden=HIDDEN_DIM, embed_dim=EMBED_DIM):
    """Fit the time-position regressor and return the embedding model.

    Minimizes mean squared error between the head output and t/T over all
    frames of all videos, with shuffled minibatch SGD (momentum). Fully
    deterministic for a fixed seed.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    for video in dataset:
        if video.n_frames < 2:
            raise ValueError(f"{video.video_id}: need at least 2 frames")
    dim = dataset[0].dim
    x = np.vstack([v.features for v in dataset])
    y = np.concatenate([time_targets(v.n_frames) for v in dataset])

    model = build_embedding_model(dim, np.random.default_rng([seed, 0]),
                                  hidden=hidden, embed_dim=embed_dim)
    layers = model.trunk + [model.head]
    params = [p for layer in layers for p in layer.params()]
    opt = SgdMomentum(learning_rate, momentum)
    shuffler = np.random.default_rng([seed, 1])

    n = x.shape[0]
    for epoch in range(epochs):
        order = shuffler.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x[idx], y[idx]
            pred = mlp_apply(layers, xb)[:, 0]
            err = pred - yb
            total += float(err @ err)
            upstream = (2.0 * err / len(idx))[:, None]
            grads, _ = mlp_backward(layers, xb, upstream)
            opt.step(params, [g for pair in grads for g in pair])
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise RuntimeError(
                f"frame-embedding training diverged at epoch {epoch} (loss={epoch_loss})"
            )
        model.loss_history.append(epoch_loss)
    return model


def embed_frames(model, video):
    """Trunk output for every frame, (T, embed_dim). The head is not applied."""
    if video.dim != model.trunk[0].n_in:
        raise ValueError(
            f"{video.video_id}: feature dim {video.dim} != trunk input {model.trunk[0].n_in}"
        )
    return mlp_apply(model.trunk, video.features)
