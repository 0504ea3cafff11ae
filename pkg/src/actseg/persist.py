"""Model serialization for trained runs (npz arrays + a JSON sidecar)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .embedding import EmbeddingModel
from .hmm import HmmParams, LikelihoodModel
from .neural import DenseLayer, RnnCell
from .shuffle import SslModel


def _pack_dense(prefix, layers, store):
    for i, layer in enumerate(layers):
        store[f"{prefix}_{i}_w"] = layer.weight
        store[f"{prefix}_{i}_b"] = layer.bias


def _unpack_dense(prefix, store, activations):
    layers = []
    for i, activation in enumerate(activations):
        layers.append(DenseLayer(store[f"{prefix}_{i}_w"],
                                 store[f"{prefix}_{i}_b"], activation))
    return layers


def save_state(out_dir, state):
    """Write one activity's models to out_dir/models.npz + meta.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = {}
    _pack_dense("trunk", state.embedding_model.trunk, store)
    _pack_dense("head", [state.embedding_model.head], store)
    _pack_dense("likelihood", state.likelihood_model.mlp, store)
    meta = {
        "n_actions": state.hmm_params.n_actions,
        "start_constant": state.hmm_params.start_constant,
        "has_ssl": state.ssl_model is not None,
        "q_history": state.q_history,
        "converged": state.converged,
        "epoch": state.epoch,
    }
    store["mean_lengths"] = state.hmm_params.mean_lengths
    if state.ssl_model is not None:
        store["rnn_w_in"] = state.ssl_model.rnn.w_in
        store["rnn_w_hid"] = state.ssl_model.rnn.w_hid
        store["rnn_bias"] = state.ssl_model.rnn.bias
        _pack_dense("ssl_head", [state.ssl_model.head], store)
    np.savez(out_dir / "models.npz", **store)
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_state(run_dir):
    """Rebuild (embedding_model, ssl_model, likelihood_model, hmm_params)."""
    run_dir = Path(run_dir)
    store = np.load(run_dir / "models.npz")
    meta = json.loads((run_dir / "meta.json").read_text())
    trunk = _unpack_dense("trunk", store, ["relu", "relu"])
    head = _unpack_dense("head", store, ["identity"])[0]
    embedding_model = EmbeddingModel(trunk=trunk, head=head)
    likelihood_model = LikelihoodModel(
        mlp=_unpack_dense("likelihood", store, ["relu", "identity"]))
    params = HmmParams(mean_lengths=store["mean_lengths"],
                       start_constant=float(meta["start_constant"]),
                       n_actions=int(meta["n_actions"]))
    ssl_model = None
    if meta["has_ssl"]:
        ssl_model = SslModel(
            shared_mlp=trunk,
            rnn=RnnCell(store["rnn_w_in"], store["rnn_w_hid"], store["rnn_bias"]),
            head=_unpack_dense("ssl_head", store, ["identity"])[0],
        )
    return embedding_model, ssl_model, likelihood_model, params, meta


def save_run(out_dir, result, cfg):
    """Persist every per-activity state plus run-level metadata."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for activity, state in result.states.items():
        save_state(out_dir / f"activity_{activity}", state)
    run_meta = {
        "variant": cfg.variant,
        "n_actions": cfg.n_actions,
        "multi_activity": cfg.multi_activity,
        "n_activities": cfg.n_activities if cfg.multi_activity else 1,
        "seed": cfg.seed,
        "max_len_policy": cfg.max_len_policy,
        "activities": sorted(result.states.keys()),
        "video_activities": result.video_activities or {},
    }
    (out_dir / "run.json").write_text(json.dumps(run_meta, indent=2) + "\n")


def load_run(run_dir):
    run_dir = Path(run_dir)
    run_meta = json.loads((run_dir / "run.json").read_text())
    states = {}
    for activity in run_meta["activities"]:
        states[activity] = load_state(run_dir / f"activity_{activity}")
    return run_meta, states
