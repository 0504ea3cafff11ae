"""Unsupervised temporal action segmentation.

Alternates MAP segmentation under a duration-explicit monotone HMM with
action-shuffle self-supervised embedding learning inside a Generalized EM
loop; evaluation uses dataset-global Hungarian matching, MoF, and F1@50%.
"""

from .clustering import ClusterModel, cluster_videos, kmeans, order_clusters
from .config import RunConfig, make_run_config
from .data import load_dataset, synth_generate, write_dataset
from .em import EmConfig, TrainState, fit
from .embedding import EmbeddingModel, FrameSequence, embed_frames, train_frame_embedding
from .hmm import (HmmParams, LikelihoodModel, Segmentation,
                  frame_log_likelihoods, poisson_log_pmf, transition_log_prob,
                  viterbi_decode)
from .metrics import MatchResult, f1_at_50, hungarian_match, mof
from .neural import DenseLayer, RnnCell, SgdMomentum, grad_check
from .pipeline import PipelineResult, run_pipeline
from .shuffle import ShuffleSample, SslModel, action_embed_frames, sample_pair

__all__ = [
    "ClusterModel", "cluster_videos", "kmeans", "order_clusters",
    "RunConfig", "make_run_config",
    "load_dataset", "synth_generate", "write_dataset",
    "EmConfig", "TrainState", "fit",
    "EmbeddingModel", "FrameSequence", "embed_frames", "train_frame_embedding",
    "HmmParams", "LikelihoodModel", "Segmentation",
    "frame_log_likelihoods", "poisson_log_pmf", "transition_log_prob",
    "viterbi_decode",
    "MatchResult", "f1_at_50", "hungarian_match", "mof",
    "DenseLayer", "RnnCell", "SgdMomentum", "grad_check",
    "PipelineResult", "run_pipeline",
    "ShuffleSample", "SslModel", "action_embed_frames", "sample_pair",
]
